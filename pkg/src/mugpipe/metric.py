"""Semantic Hamming-like distance over the seven attribute categories.

Numeric categories use a thresholded piecewise-linear distance with
tolerance h = t/4; string categories score 0 / 0.5 / 1 via equivalence
pairs; the per-subject score is the mean over usable categories and the
accuracy is 100 * (1 - mean).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .attributes import (
    CATEGORY_ORDER,
    PROVENANCE_LABELS,
    AttributeDescription,
    AttributeValue,
    Category,
    Provenance,
    SubjectRecord,
)
from .errors import ConfigError, ScoringError, UsageError


@dataclass(frozen=True)
class NumericThresholds:
    """Per-category thresholds t; tolerance is always h = t/4."""

    age: float = 10.0
    height: float = 15.0
    weight: float = 15.0

    def __post_init__(self) -> None:
        for name in ("age", "height", "weight"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"threshold {name} must be > 0")

    def t_for(self, category: Category) -> float:
        if category is Category.AGE:
            return self.age
        if category is Category.HEIGHT:
            return self.height
        if category is Category.WEIGHT:
            return self.weight
        raise UsageError(f"{category.value} has no numeric threshold")

    def h_for(self, category: Category) -> float:
        return self.t_for(category) / 4.0


def _as_pair(a: str, b: str) -> frozenset[str]:
    if a == b:
        raise ConfigError(f"equivalence pair ({a!r}, {a!r}) is degenerate")
    return frozenset((a, b))


@dataclass(frozen=True)
class EquivalenceTable:
    """Label pairs scored 0.5 per string category.

    The relation is symmetric but deliberately NOT transitive; pairs are
    stored as-is and never closed. Gender admits no pairs (binary).
    """

    pairs: Mapping[Category, frozenset[frozenset[str]]]

    def __post_init__(self) -> None:
        for category, pairset in self.pairs.items():
            if category.is_numeric:
                raise ConfigError(
                    f"equivalence pairs not applicable to numeric {category.value}"
                )
            if category is Category.GENDER and pairset:
                raise ConfigError("gender is binary and admits no equivalence pairs")
            for pair in pairset:
                if len(pair) != 2:
                    raise ConfigError(f"{category.value}: malformed pair {set(pair)}")

    def related(self, category: Category, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.pairs.get(category, frozenset())

    def merged(
        self,
        extra: Mapping[Category, Iterable[tuple[str, str]]],
        replace: bool = False,
    ) -> "EquivalenceTable":
        base = {} if replace else {cat: set(p) for cat, p in self.pairs.items()}
        for cat, pairs in extra.items():
            bucket = base.setdefault(cat, set())
            for a, b in pairs:
                bucket.add(_as_pair(a.lower(), b.lower()))
        return EquivalenceTable(
            pairs={cat: frozenset(p) for cat, p in base.items()}
        )


def _expand_group(*labels: str) -> set[frozenset[str]]:
    """All unordered pairs of a label group."""
    return {
        _as_pair(a, b) for i, a in enumerate(labels) for b in labels[i + 1 :]
    }


def default_equivalence_table() -> EquivalenceTable:
    """The shipped confusion groups.

    Ethnic groups mix one 3-element group (expanded to its three pairs)
    with overlapping 2-element groups; hispanic belongs to three of them,
    so the relation cannot be a partition.
    """
    ethnic = _expand_group("african american", "african", "aboriginal")
    ethnic |= {
        _as_pair("white", "hispanic"),
        _as_pair("hispanic", "arab"),
        _as_pair("hispanic", "indian"),
    }
    hair = {
        _as_pair("black", "brown"),
        _as_pair("blonde", "light brown"),
        _as_pair("brown", "light brown"),
    }
    iris = {
        _as_pair("black", "brown"),
        _as_pair("blue", "green"),
        _as_pair("green", "brown"),
    }
    return EquivalenceTable(
        pairs={
            Category.GENDER: frozenset(),
            Category.ETHNIC_GROUP: frozenset(ethnic),
            Category.HAIR_COLOR: frozenset(hair),
            Category.IRIS_COLOR: frozenset(iris),
        }
    )


def numeric_distance(a: float, b: float, t: float) -> float:
    """Piecewise-linear distance: 0 inside the tolerance h = t/4, a linear
    bridge up to the threshold t, then 1. Boundaries resolved inclusively
    low; the bridge is continuous so both assignments agree."""
    if t <= 0:
        raise ConfigError(f"threshold must be > 0, got {t}")
    h = t / 4.0
    gap = abs(a - b)
    if gap <= h:
        return 0.0
    if gap <= t:
        return (gap - h) / (t - h)
    return 1.0


def string_distance(
    category: Category, a: str, b: str, table: EquivalenceTable
) -> float:
    """0 on exact label match, 0.5 for an equivalence pair, else 1."""
    if category.is_numeric:
        raise UsageError(f"{category.value} is numeric; use numeric_distance")
    if a == b:
        return 0.0
    if table.related(category, a, b):
        return 0.5
    return 1.0


def category_distance(
    truth: AttributeValue,
    pred: AttributeValue,
    thresholds: NumericThresholds,
    table: EquivalenceTable,
) -> float | None:
    """Distance for one category, or None when the ground truth is unknown
    (category excluded from scoring). A known truth with an unknown
    prediction scores maximal distance 1."""
    if truth.category is not pred.category:
        raise UsageError(
            f"category mismatch: {truth.category.value} vs {pred.category.value}"
        )
    if not truth.known:
        return None
    if not pred.known:
        return 1.0
    if truth.category.is_numeric:
        return numeric_distance(
            float(truth.normalized),
            float(pred.normalized),
            thresholds.t_for(truth.category),
        )
    return string_distance(truth.category, truth.normalized, pred.normalized, table)


@dataclass(frozen=True)
class DistanceReport:
    """Per-category distances for one described image plus their mean."""

    subject_id: str
    provenance: Provenance
    source_image: str
    distances: Mapping[Category, float]
    excluded: tuple[Category, ...] = ()

    @property
    def mean_distance(self) -> float:
        return sum(self.distances.values()) / len(self.distances)

    @property
    def accuracy(self) -> float:
        return 100.0 * (1.0 - self.mean_distance)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "provenance": self.provenance.value,
            "source_image": self.source_image,
            "distances": {
                c.value: (self.distances[c] if c in self.distances else None)
                for c in CATEGORY_ORDER
            },
            "excluded": [c.value for c in self.excluded],
            "mean_distance": self.mean_distance,
            "accuracy": self.accuracy,
        }


def score_description(
    truth: SubjectRecord,
    pred: AttributeDescription,
    thresholds: NumericThresholds | None = None,
    table: EquivalenceTable | None = None,
) -> DistanceReport:
    """Score one description against its ground-truth record."""
    if truth.subject_id != pred.subject_id:
        raise UsageError(
            f"subject mismatch: {truth.subject_id!r} vs {pred.subject_id!r}"
        )
    if thresholds is None:
        thresholds = NumericThresholds()
    if table is None:
        table = default_equivalence_table()

    distances: dict[Category, float] = {}
    excluded: list[Category] = []
    for category in CATEGORY_ORDER:
        d = category_distance(
            truth.attributes[category], pred.attributes[category], thresholds, table
        )
        if d is None:
            excluded.append(category)
        else:
            distances[category] = d
    if not distances:
        raise ScoringError(
            f"subject {truth.subject_id}: no categories with known ground truth"
        )
    return DistanceReport(
        subject_id=truth.subject_id,
        provenance=pred.provenance,
        source_image=pred.source_image,
        distances=distances,
        excluded=tuple(excluded),
    )


@dataclass(frozen=True)
class CohortRow:
    provenance: Provenance
    mean_accuracy: float
    count: int


#: Row ordering for cohort tables (matches the enhancement comparison order).
COHORT_ROW_ORDER: tuple[Provenance, ...] = (
    Provenance.ORIGINAL,
    Provenance.MAXIM,
    Provenance.SRGAN,
    Provenance.TV_DENOISE,
    Provenance.GENERATED,
)


def score_cohort(reports: Sequence[DistanceReport]) -> list[CohortRow]:
    """Mean accuracy per provenance arm, in fixed row order."""
    if not reports:
        raise ScoringError("cannot aggregate an empty report list")
    groups: dict[Provenance, list[float]] = {}
    for report in reports:
        groups.setdefault(report.provenance, []).append(report.accuracy)
    rows = []
    for provenance in COHORT_ROW_ORDER:
        if provenance in groups:
            values = groups[provenance]
            rows.append(
                CohortRow(
                    provenance=provenance,
                    mean_accuracy=sum(values) / len(values),
                    count=len(values),
                )
            )
    return rows


def write_reports_json(reports: Sequence[DistanceReport], path: str | Path) -> None:
    payload = [r.to_dict() for r in reports]
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_reports_csv(reports: Sequence[DistanceReport], path: str | Path) -> None:
    """One row per subject x provenance; empty cell = excluded category."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "provenance", "source_image"]
            + [c.value for c in CATEGORY_ORDER]
            + ["mean_distance", "accuracy"]
        )
        for r in reports:
            cells = [
                f"{r.distances[c]:.6f}" if c in r.distances else ""
                for c in CATEGORY_ORDER
            ]
            writer.writerow(
                [r.subject_id, r.provenance.value, r.source_image]
                + cells
                + [f"{r.mean_distance:.6f}", f"{r.accuracy:.6f}"]
            )


def write_cohort_csv(rows: Sequence[CohortRow], path: str | Path) -> None:
    """Cohort accuracy table: one row per input-picture arm."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_pictures", "mean_accuracy", "count"])
        for row in rows:
            writer.writerow(
                [
                    PROVENANCE_LABELS[row.provenance],
                    f"{row.mean_accuracy:.3f}",
                    row.count,
                ]
            )


def write_cohort_json(rows: Sequence[CohortRow], path: str | Path) -> None:
    payload = [
        {
            "input_pictures": PROVENANCE_LABELS[row.provenance],
            "provenance": row.provenance.value,
            "mean_accuracy": row.mean_accuracy,
            "count": row.count,
        }
        for row in rows
    ]
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
