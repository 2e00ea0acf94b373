from __future__ import annotations

import random

import pytest

from mugpipe.attributes import (
    CATEGORY_ORDER,
    AttributeDescription,
    AttributeValue,
    Category,
    Provenance,
    SubjectRecord,
    normalize_value,
)
from mugpipe.errors import ConfigError, ScoringError, UsageError
from mugpipe.metric import (
    DistanceReport,
    EquivalenceTable,
    NumericThresholds,
    category_distance,
    default_equivalence_table,
    numeric_distance,
    score_cohort,
    score_description,
    string_distance,
    write_cohort_csv,
)


def oracle_numeric_distance(a: float, b: float, t: float) -> float:
    """Literal three-case transcription used as an independent check."""
    h = t / 4.0
    gap = abs(a - b)
    if gap < h:
        return 0.0
    if gap > t:
        return 1.0
    return (gap - h) / (t - h)


def test_numeric_distance_identical():
    assert numeric_distance(30, 30, 10) == 0.0


def test_numeric_distance_bridge_case():
    # h = 2.5; (5 - 2.5) / (10 - 2.5) = 1/3
    assert numeric_distance(30, 35, 10) == pytest.approx(1 / 3, abs=1e-12)


def test_numeric_distance_beyond_threshold():
    assert numeric_distance(30, 45, 10) == 1.0


def test_numeric_distance_boundaries():
    # continuous at both seams
    assert numeric_distance(0, 2.5, 10) == 0.0
    assert numeric_distance(0, 10, 10) == 1.0


def test_numeric_distance_matches_bruteforce_grid():
    rng = random.Random(42)
    for _ in range(20):
        t = rng.uniform(0.5, 100.0)
        h = t / 4.0
        for gap in (0.0, h / 2, h, (h + t) / 2, t, 2 * t):
            a = rng.uniform(-50, 50)
            expected = oracle_numeric_distance(a, a + gap, t)
            assert abs(numeric_distance(a, a + gap, t) - expected) < 1e-12


def test_numeric_distance_properties():
    rng = random.Random(1)
    for _ in range(200):
        t = rng.uniform(0.1, 50)
        a, b = rng.uniform(-100, 100), rng.uniform(-100, 100)
        d = numeric_distance(a, b, t)
        assert 0.0 <= d <= 1.0
        assert d == numeric_distance(b, a, t)
    # non-decreasing and continuous in |a - b|
    t = 8.0
    gaps = [i * t / 500 for i in range(1001)]
    values = [numeric_distance(0.0, g, t) for g in gaps]
    assert all(y2 >= y1 for y1, y2 in zip(values, values[1:]))
    assert max(
        abs(y2 - y1) for y1, y2 in zip(values, values[1:])
    ) < 0.01  # no jumps on a fine grid


def test_numeric_distance_rejects_bad_threshold():
    with pytest.raises(ConfigError):
        numeric_distance(1, 2, 0)


def test_string_distance_table_one_pairs():
    table = default_equivalence_table()
    assert string_distance(Category.ETHNIC_GROUP, "white", "hispanic", table) == 0.5
    assert string_distance(Category.ETHNIC_GROUP, "white", "arab", table) == 1.0
    assert string_distance(Category.HAIR_COLOR, "brown", "brown", table) == 0.0
    assert string_distance(Category.IRIS_COLOR, "blue", "green", table) == 0.5


def test_string_distance_non_transitive():
    table = default_equivalence_table()
    assert string_distance(Category.ETHNIC_GROUP, "white", "hispanic", table) == 0.5
    assert string_distance(Category.ETHNIC_GROUP, "hispanic", "arab", table) == 0.5
    assert string_distance(Category.ETHNIC_GROUP, "white", "arab", table) == 1.0


def test_string_distance_three_element_group_expands_pairwise():
    table = default_equivalence_table()
    for a, b in (
        ("african american", "african"),
        ("african american", "aboriginal"),
        ("african", "aboriginal"),
    ):
        assert string_distance(Category.ETHNIC_GROUP, a, b, table) == 0.5
        assert string_distance(Category.ETHNIC_GROUP, b, a, table) == 0.5


def test_string_distance_symmetry_and_identity():
    table = default_equivalence_table()
    labels = ["black", "brown", "light brown", "blonde", "red"]
    for a in labels:
        for b in labels:
            d1 = string_distance(Category.HAIR_COLOR, a, b, table)
            d2 = string_distance(Category.HAIR_COLOR, b, a, table)
            assert d1 == d2
            assert (d1 == 0.0) == (a == b)


def test_gender_admits_no_pairs():
    with pytest.raises(ConfigError):
        EquivalenceTable(pairs={Category.GENDER: frozenset({frozenset({"m", "f"})})})
    table = default_equivalence_table()
    assert string_distance(Category.GENDER, "male", "female", table) == 1.0
    assert string_distance(Category.GENDER, "male", "male", table) == 0.0


def test_equivalence_merge_extends_defaults():
    table = default_equivalence_table().merged(
        {Category.HAIR_COLOR: [("red", "auburn")]}
    )
    assert string_distance(Category.HAIR_COLOR, "red", "auburn", table) == 0.5
    assert string_distance(Category.HAIR_COLOR, "black", "brown", table) == 0.5


def _value(category, raw):
    return normalize_value(category, raw)


def _record(subject_id="p01", **raw_attrs):
    defaults = {
        "gender": "male",
        "age": "40",
        "ethnic_group": "white",
        "hair_color": "black",
        "iris_color": "brown",
        "height": "180",
        "weight": "80",
    }
    defaults.update(raw_attrs)
    return SubjectRecord(
        subject_id=subject_id,
        attributes={
            c: _value(c, defaults[c.value]) for c in CATEGORY_ORDER
        },
    )


def _description(subject_id="p01", provenance=Provenance.ORIGINAL, **raw_attrs):
    defaults = {
        "gender": "male",
        "age": "40",
        "ethnic_group": "white",
        "hair_color": "black",
        "iris_color": "brown",
        "height": "180",
        "weight": "80",
    }
    defaults.update(raw_attrs)
    return AttributeDescription(
        subject_id=subject_id,
        source_image="img.png",
        provenance=provenance,
        attributes={c: _value(c, defaults[c.value]) for c in CATEGORY_ORDER},
    )


def test_category_distance_unknown_prediction_scores_one():
    thresholds = NumericThresholds()
    table = default_equivalence_table()
    truth = _value(Category.AGE, "40")
    pred = AttributeValue.unknown(Category.AGE, "unclear")
    assert category_distance(truth, pred, thresholds, table) == 1.0


def test_category_distance_unknown_truth_excluded():
    thresholds = NumericThresholds()
    table = default_equivalence_table()
    truth = AttributeValue.unknown(Category.AGE)
    pred = _value(Category.AGE, "40")
    assert category_distance(truth, pred, thresholds, table) is None


def test_category_distance_match():
    thresholds = NumericThresholds()
    table = default_equivalence_table()
    truth = _value(Category.GENDER, "male")
    pred = _value(Category.GENDER, "male")
    assert category_distance(truth, pred, thresholds, table) == 0.0


def test_category_distance_category_mismatch():
    thresholds = NumericThresholds()
    table = default_equivalence_table()
    with pytest.raises(UsageError):
        category_distance(
            _value(Category.AGE, "40"), _value(Category.WEIGHT, "80"),
            thresholds, table,
        )


def test_score_description_perfect():
    report = score_description(_record(), _description())
    assert report.mean_distance == 0.0
    assert report.accuracy == 100.0


def test_score_description_hand_computed_mean():
    # distances: gender 0, age 0.5, ethnic 1, rest 0 -> mean 1.5/7
    truth = _record()
    pred = _description(
        age="46.25",          # gap 6.25; h=2.5, t=10 -> (6.25-2.5)/7.5 = 0.5
        ethnic_group="asian",  # unrelated label -> 1
    )
    report = score_description(truth, pred)
    assert report.mean_distance == pytest.approx(1.5 / 7, abs=1e-12)
    assert report.accuracy == pytest.approx(100 * (1 - 1.5 / 7), abs=1e-9)
    assert report.accuracy == pytest.approx(78.5714285714, abs=1e-6)


def test_accuracy_complements_mean_distance():
    report = score_description(_record(), _description(hair_color="brown"))
    assert report.accuracy + 100 * report.mean_distance == pytest.approx(100, abs=1e-9)


def test_score_description_excludes_unknown_truth():
    truth = _record(iris_color="not visible")
    report = score_description(truth, _description())
    assert Category.IRIS_COLOR in report.excluded
    assert len(report.distances) == 6


def test_score_description_subject_mismatch():
    with pytest.raises(UsageError):
        score_description(_record("a"), _description("b"))


def test_score_description_all_unknown_truth_fails():
    truth = _record(
        gender="unknown", age="unknown", ethnic_group="unknown",
        hair_color="unknown", iris_color="unknown", height="unknown",
        weight="unknown",
    )
    with pytest.raises(ScoringError):
        score_description(truth, _description())


def test_score_description_permutation_invariant():
    truth = _record()
    base = _description(age="46.25", hair_color="brown")
    shuffled_attrs = dict(reversed(list(base.attributes.items())))
    shuffled = AttributeDescription(
        subject_id=base.subject_id,
        source_image=base.source_image,
        provenance=base.provenance,
        attributes=shuffled_attrs,
    )
    assert (
        score_description(truth, base).mean_distance
        == score_description(truth, shuffled).mean_distance
    )


def _report(accuracy: float, provenance: Provenance) -> DistanceReport:
    # mean distance d gives accuracy 100(1-d); pick a single-category report
    return DistanceReport(
        subject_id="s",
        provenance=provenance,
        source_image="img.png",
        distances={Category.GENDER: 1.0 - accuracy / 100.0},
    )


def test_score_cohort_simple_mean():
    rows = score_cohort(
        [_report(80, Provenance.ORIGINAL), _report(90, Provenance.ORIGINAL)]
    )
    assert len(rows) == 1
    assert rows[0].mean_accuracy == pytest.approx(85.0, abs=1e-9)
    assert rows[0].count == 2


def test_score_cohort_grouped_means():
    rows = score_cohort(
        [
            _report(100, Provenance.ORIGINAL),
            _report(50, Provenance.MAXIM),
            _report(70, Provenance.MAXIM),
        ]
    )
    by_prov = {r.provenance: r for r in rows}
    assert by_prov[Provenance.ORIGINAL].mean_accuracy == pytest.approx(100.0)
    assert by_prov[Provenance.MAXIM].mean_accuracy == pytest.approx(60.0)


def test_score_cohort_singleton():
    rows = score_cohort([_report(73.25, Provenance.SRGAN)])
    assert rows[0].mean_accuracy == pytest.approx(73.25)


def test_score_cohort_empty_fails():
    with pytest.raises(ScoringError):
        score_cohort([])


def test_cohort_row_order_matches_comparison_table(tmp_path):
    reports = [
        _report(80, Provenance.TV_DENOISE),
        _report(81, Provenance.SRGAN),
        _report(82, Provenance.ORIGINAL),
        _report(83, Provenance.MAXIM),
    ]
    rows = score_cohort(reports)
    assert [r.provenance for r in rows] == [
        Provenance.ORIGINAL,
        Provenance.MAXIM,
        Provenance.SRGAN,
        Provenance.TV_DENOISE,
    ]
    path = tmp_path / "cohort.csv"
    write_cohort_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("input_pictures")
    assert [line.split(",")[0] for line in lines[1:]] == [
        "Original", "MAXIM", "SRGAN", "TVD",
    ]


def test_distances_always_in_unit_interval():
    rng = random.Random(3)
    thresholds = NumericThresholds()
    table = default_equivalence_table()
    ethnic_pool = ["white", "hispanic", "arab", "indian", "african", "asian"]
    for _ in range(300):
        truth = _record(
            age=str(rng.randint(10, 90)),
            ethnic_group=rng.choice(ethnic_pool),
        )
        pred = _description(
            age=str(rng.randint(10, 90)),
            ethnic_group=rng.choice(ethnic_pool),
        )
        report = score_description(truth, pred, thresholds, table)
        assert 0.0 <= report.mean_distance <= 1.0
        assert 0.0 <= report.accuracy <= 100.0
        for d in report.distances.values():
            assert 0.0 <= d <= 1.0
