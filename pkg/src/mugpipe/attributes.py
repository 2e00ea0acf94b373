"""Forensic attribute categories, ground-truth records, and normalization.

Everything downstream (metric scoring, prompt building) consumes the
normalized values produced here: canonical units for numeric categories
(years / cm / kg) and lowercase punctuation-free labels for string ones.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigError, IngestionError, UsageError


class Category(str, Enum):
    """The seven attribute categories found on POI posters."""

    GENDER = "gender"
    AGE = "age"
    ETHNIC_GROUP = "ethnic_group"
    HAIR_COLOR = "hair_color"
    IRIS_COLOR = "iris_color"
    HEIGHT = "height"
    WEIGHT = "weight"

    @property
    def is_numeric(self) -> bool:
        return self in _NUMERIC_CATEGORIES

    @property
    def display_term(self) -> str:
        """Human-readable name, e.g. ``iris color``."""
        return self.value.replace("_", " ")


_NUMERIC_CATEGORIES = frozenset({Category.AGE, Category.HEIGHT, Category.WEIGHT})

#: Canonical ordering used for questions, reports, and serialization.
CATEGORY_ORDER: tuple[Category, ...] = (
    Category.GENDER,
    Category.AGE,
    Category.ETHNIC_GROUP,
    Category.HAIR_COLOR,
    Category.IRIS_COLOR,
    Category.HEIGHT,
    Category.WEIGHT,
)

#: Canonical unit per numeric category.
CANONICAL_UNITS = {Category.AGE: "years", Category.HEIGHT: "cm", Category.WEIGHT: "kg"}

CM_PER_INCH = 2.54
CM_PER_FOOT = 30.48
KG_PER_POUND = 0.453592


class Provenance(str, Enum):
    """Which processing arm an image (and its description) came from."""

    ORIGINAL = "original"
    MAXIM = "maxim"
    SRGAN = "srgan"
    TV_DENOISE = "tv_denoise"
    GENERATED = "generated"


#: Display labels used in cohort tables.
PROVENANCE_LABELS = {
    Provenance.ORIGINAL: "Original",
    Provenance.MAXIM: "MAXIM",
    Provenance.SRGAN: "SRGAN",
    Provenance.TV_DENOISE: "TVD",
    Provenance.GENERATED: "Generated",
}


@dataclass(frozen=True)
class AttributeValue:
    """One attribute of one subject, raw and normalized.

    ``normalized`` is set iff ``known`` is true: a float in canonical units
    for numeric categories, a clean lowercase label for string ones.
    """

    category: Category
    raw: str
    normalized: float | str | None = None
    known: bool = False

    def __post_init__(self) -> None:
        if self.known != (self.normalized is not None):
            raise UsageError(
                f"{self.category.value}: normalized must be set exactly when known"
            )
        if self.known and self.category.is_numeric:
            if not isinstance(self.normalized, (int, float)) or self.normalized <= 0:
                raise UsageError(
                    f"{self.category.value}: numeric value must be > 0, "
                    f"got {self.normalized!r}"
                )
        if self.known and not self.category.is_numeric:
            label = self.normalized
            if (
                not isinstance(label, str)
                or label != label.lower()
                or _PUNCT_RE.search(label)
            ):
                raise UsageError(
                    f"{self.category.value}: label must be lowercase and "
                    f"punctuation-free, got {label!r}"
                )

    @classmethod
    def unknown(cls, category: Category, raw: str = "") -> "AttributeValue":
        return cls(category=category, raw=raw, normalized=None, known=False)


@dataclass(frozen=True)
class SynonymTable:
    """Ordered surface-form rewrites applied per string category.

    Rewrites must be idempotent: every rewrite target must itself be a
    fixpoint of the table (checked at construction).
    """

    rewrites: Mapping[Category, tuple[tuple[str, str], ...]]

    def __post_init__(self) -> None:
        for category, pairs in self.rewrites.items():
            if category.is_numeric:
                raise ConfigError(f"synonyms not applicable to numeric {category.value}")
            for _, target in pairs:
                if self.apply(category, target) != target:
                    raise ConfigError(
                        f"synonym table for {category.value} is not idempotent: "
                        f"rewrite target {target!r} is itself rewritten"
                    )

    def apply(self, category: Category, text: str) -> str:
        for surface, target in self.rewrites.get(category, ()):
            text = re.sub(rf"\b{re.escape(surface)}\b", target, text)
        return _collapse_spaces(text)

    def merged(self, extra: Mapping[Category, Sequence[tuple[str, str]]]) -> "SynonymTable":
        """New table with ``extra`` rewrites appended after the existing ones."""
        combined = {cat: tuple(pairs) for cat, pairs in self.rewrites.items()}
        for cat, pairs in extra.items():
            combined[cat] = combined.get(cat, ()) + tuple(
                (surface.lower(), target.lower()) for surface, target in pairs
            )
        return SynonymTable(rewrites=combined)


def default_synonym_table() -> SynonymTable:
    """Rewrites shipped by default; only caucasian->white is load-bearing."""
    return SynonymTable(
        rewrites={
            Category.ETHNIC_GROUP: (("caucasian", "white"),),
            Category.HAIR_COLOR: (("grey", "gray"), ("blond", "blonde")),
            Category.IRIS_COLOR: (("grey", "gray"),),
            Category.GENDER: (),
        }
    )


_PUNCT_RE = re.compile(r"[!\"#$%&'()*+,\-./:;<=>?@\[\\\]^_`{|}~]+")
_SPACE_RE = re.compile(r"\s+")

#: Raw strings treated as "the source did not know".
UNKNOWN_MARKERS = frozenset({"", "unknown", "n/a", "not visible"})
_STRIPPED_UNKNOWN_MARKERS = frozenset(
    _SPACE_RE.sub(" ", _PUNCT_RE.sub(" ", m)).strip() for m in UNKNOWN_MARKERS
)


def _collapse_spaces(text: str) -> str:
    return _SPACE_RE.sub(" ", text).strip()


def _is_unknown_marker(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in UNKNOWN_MARKERS:
        return True
    return _collapse_spaces(_PUNCT_RE.sub(" ", lowered)) in _STRIPPED_UNKNOWN_MARKERS


def normalize_string_value(
    category: Category, raw: str, synonyms: SynonymTable | None = None
) -> AttributeValue:
    """Lowercase, strip punctuation, collapse whitespace, apply synonyms.

    Unknown markers ("unknown", "n/a", "not visible", empty) yield an
    unknown value instead of a label.
    """
    if category.is_numeric:
        raise UsageError(f"{category.value} is numeric; use normalize_numeric_value")
    if synonyms is None:
        synonyms = default_synonym_table()
    if _is_unknown_marker(raw):
        return AttributeValue.unknown(category, raw)
    label = _collapse_spaces(_PUNCT_RE.sub(" ", raw.lower()))
    label = synonyms.apply(category, label)
    if not label or _is_unknown_marker(label):
        return AttributeValue.unknown(category, raw)
    return AttributeValue(category=category, raw=raw, normalized=label, known=True)


_NUM = r"\d+(?:\.\d+)?"
_LEAD_RE = re.compile(r"^(?:about|approx(?:imately)?\.?|around|~)\s*", re.IGNORECASE)
_RANGE_RE = re.compile(rf"^({_NUM})\s*(?:-|–|—|to)\s*({_NUM})\s*([a-z\". ']*)$")
_SINGLE_RE = re.compile(rf"^({_NUM})\s*([a-z\". ']*)$")
_FEET_INCHES_RE = re.compile(
    rf"^(\d+)\s*(?:'|’|ft\.?|feet|foot)\s*({_NUM})?\s*(?:\"|”|''|in\.?|inches|inch)?$"
)

_AGE_UNITS = {"", "years old", "year old", "years", "year", "yrs", "yr", "y o", "yo"}
_HEIGHT_CM_UNITS = {"cm", "cms", "centimeters", "centimetres", "centimeter", "centimetre"}
_HEIGHT_M_UNITS = {"m", "meters", "metres", "meter", "metre"}
_WEIGHT_KG_UNITS = {"", "kg", "kgs", "kilograms", "kilogram", "kilos", "kilo"}
_WEIGHT_LB_UNITS = {"lb", "lbs", "pounds", "pound"}


def _to_canonical(category: Category, value: float, unit: str) -> float | None:
    unit = _collapse_spaces(_PUNCT_RE.sub(" ", unit))
    if category is Category.AGE:
        return value if unit in _AGE_UNITS else None
    if category is Category.HEIGHT:
        if unit in _HEIGHT_CM_UNITS:
            return value
        if unit in _HEIGHT_M_UNITS:
            return value * 100.0
        if unit == "":
            # Bare number: metres when plausibly metric stature, else cm.
            return value * 100.0 if value < 3.0 else value
        return None
    if category is Category.WEIGHT:
        if unit in _WEIGHT_KG_UNITS:
            return value
        if unit in _WEIGHT_LB_UNITS:
            return value * KG_PER_POUND
        return None
    raise UsageError(f"{category.value} is not numeric")


def normalize_numeric_value(category: Category, raw: str) -> AttributeValue:
    """Parse a numeric attribute into canonical units (years / cm / kg).

    Handles bare numbers, unit suffixes (m, cm, lbs, kg, years), ranges
    such as "35-40" (midpoint), and feet'inches" heights. Unparseable
    input degrades to an unknown value, never an exception.
    """
    if not category.is_numeric:
        raise UsageError(f"{category.value} is a string category")
    text = _LEAD_RE.sub("", raw.strip().lower())
    if _is_unknown_marker(text):
        return AttributeValue.unknown(category, raw)

    value: float | None = None
    if category is Category.HEIGHT:
        m = _FEET_INCHES_RE.match(text)
        if m:
            feet = float(m.group(1))
            inches = float(m.group(2)) if m.group(2) else 0.0
            value = feet * CM_PER_FOOT + inches * CM_PER_INCH
    if value is None:
        m = _RANGE_RE.match(text)
        if m:
            midpoint = (float(m.group(1)) + float(m.group(2))) / 2.0
            value = _to_canonical(category, midpoint, m.group(3))
    if value is None:
        m = _SINGLE_RE.match(text)
        if m:
            value = _to_canonical(category, float(m.group(1)), m.group(2))

    if value is None or value <= 0:
        return AttributeValue.unknown(category, raw)
    return AttributeValue(
        category=category, raw=raw, normalized=round(value, 2), known=True
    )


def normalize_value(
    category: Category, raw: str, synonyms: SynonymTable | None = None
) -> AttributeValue:
    """Dispatch to the numeric or string normalizer for ``category``."""
    if category.is_numeric:
        return normalize_numeric_value(category, raw)
    return normalize_string_value(category, raw, synonyms)


def _check_complete(attributes: Mapping[Category, AttributeValue], owner: str) -> None:
    for category in CATEGORY_ORDER:
        if category not in attributes:
            raise UsageError(f"{owner}: missing category {category.value}")
        if attributes[category].category is not category:
            raise UsageError(f"{owner}: attribute filed under wrong category")
    if len(attributes) != len(CATEGORY_ORDER):
        raise UsageError(f"{owner}: unexpected extra categories")


@dataclass(frozen=True)
class SubjectRecord:
    """Ground-truth attributes and reference images for one subject."""

    subject_id: str
    attributes: Mapping[Category, AttributeValue]
    reference_images: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.subject_id:
            raise UsageError("subject_id must be non-empty")
        _check_complete(self.attributes, f"subject {self.subject_id}")


@dataclass(frozen=True)
class AttributeDescription:
    """A predicted (describer-sourced) attribute set for one image."""

    subject_id: str
    source_image: str
    provenance: Provenance
    attributes: Mapping[Category, AttributeValue]

    def __post_init__(self) -> None:
        _check_complete(self.attributes, f"description of {self.subject_id}")


def description_from_answers(
    subject_id: str,
    source_image: str,
    provenance: Provenance,
    answers: Mapping[Category, str | None],
    synonyms: SynonymTable | None = None,
) -> AttributeDescription:
    """Build a description from raw per-category answers; missing -> unknown."""
    attributes = {}
    for category in CATEGORY_ORDER:
        raw = answers.get(category)
        if raw is None:
            attributes[category] = AttributeValue.unknown(category)
        else:
            attributes[category] = normalize_value(category, raw, synonyms)
    return AttributeDescription(
        subject_id=subject_id,
        source_image=source_image,
        provenance=provenance,
        attributes=attributes,
    )


def load_subject_records(
    path: str | Path, synonyms: SynonymTable | None = None
) -> list[SubjectRecord]:
    """Load and normalize a subject-records JSON file.

    The file is a JSON array of objects with a ``subject_id``, an
    ``attributes`` object holding raw text for all seven categories, and
    an optional ``reference_images`` list.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestionError(f"records file not found: {path}")
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}: invalid JSON: {exc}")

    if not isinstance(data, list):
        raise IngestionError(f"{path}: expected a JSON array of records")

    records: list[SubjectRecord] = []
    seen: set[str] = set()
    for index, item in enumerate(data):
        where = f"record {index}"
        if not isinstance(item, dict):
            raise IngestionError(f"{where}: expected an object")
        subject_id = item.get("subject_id")
        if not isinstance(subject_id, str) or not subject_id:
            raise IngestionError(f"{where}: missing or empty subject_id")
        if subject_id in seen:
            raise IngestionError(f"{where}: duplicate subject_id {subject_id!r}")
        seen.add(subject_id)

        raw_attrs = item.get("attributes")
        if not isinstance(raw_attrs, dict):
            raise IngestionError(f"{where} ({subject_id}): missing attributes object")
        attributes = {}
        for category in CATEGORY_ORDER:
            if category.value not in raw_attrs:
                raise IngestionError(
                    f"{where} ({subject_id}): missing attribute {category.value}"
                )
            raw = raw_attrs[category.value]
            if not isinstance(raw, str):
                raise IngestionError(
                    f"{where} ({subject_id}): attribute {category.value} must be text"
                )
            attributes[category] = normalize_value(category, raw, synonyms)
        extra = set(raw_attrs) - {c.value for c in CATEGORY_ORDER}
        if extra:
            raise IngestionError(
                f"{where} ({subject_id}): unknown attributes {sorted(extra)}"
            )

        images = item.get("reference_images", [])
        if not isinstance(images, list) or any(not isinstance(p, str) for p in images):
            raise IngestionError(
                f"{where} ({subject_id}): reference_images must be a list of paths"
            )
        records.append(
            SubjectRecord(
                subject_id=subject_id,
                attributes=attributes,
                reference_images=tuple(images),
            )
        )
    return records
