"""Prompt construction for describers and image generators.

Generation prompts carry only the features that keep the output a full,
faithful mugshot: gender, age, ethnic group, and hair. Overly specific
features (eyes, nose, ears, facial hair, clothing, ...) pull generators
into close-ups or side profiles and are excluded; any attribute value
mentioning one is dropped whole. Aging prompts add "wrinkles" for elderly
targets and push "child"/"baby" into the negative prompt.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Union

from .attributes import CATEGORY_ORDER, AttributeDescription, Category, SubjectRecord
from .errors import ConfigError, PromptError, UsageError

#: Character budget approximating the common 77-token prompt limit.
DEFAULT_MAX_LENGTH = 300

_AGE_TOKEN_RE = re.compile(r"^\d+ years old$")


def _load_template(name: str) -> str:
    return (
        resources.files("mugpipe").joinpath("templates", name).read_text("utf-8")
    )


class AgeDirection(str, Enum):
    AGE = "age"
    DEAGE = "deage"


@dataclass(frozen=True)
class FeatureRules:
    """Which feature categories go into generation prompts, and which
    terms must never appear in them."""

    include_categories: tuple[str, ...] = (
        "gender",
        "age",
        "ethnic group",
        "hair length",
        "hair color",
    )
    exclude_terms: tuple[str, ...] = (
        "eyes",
        "nose",
        "ears",
        "facial hair",
        "beard",
        "mustache",
        "clothing",
        "teeth",
        "expression",
    )

    def __post_init__(self) -> None:
        overlap = set(self.include_categories) & set(self.exclude_terms)
        if overlap:
            raise ConfigError(f"include/exclude sets overlap: {sorted(overlap)}")

    def mentions_excluded(self, text: str) -> bool:
        lowered = text.lower()
        return any(
            re.search(rf"\b{re.escape(term)}\b", lowered)
            for term in self.exclude_terms
        )

    def with_overrides(
        self,
        extra_excludes: Iterable[str] = (),
        extra_includes: Iterable[str] = (),
    ) -> "FeatureRules":
        includes = list(self.include_categories)
        for name in extra_includes:
            if name.lower() not in includes:
                includes.append(name.lower())
        excludes = list(self.exclude_terms)
        for term in extra_excludes:
            if term.lower() not in excludes:
                excludes.append(term.lower())
        return FeatureRules(
            include_categories=tuple(includes), exclude_terms=tuple(excludes)
        )


@dataclass(frozen=True)
class PromptSpec:
    """Ordered positive/negative prompt tokens within a character budget."""

    positive: tuple[str, ...]
    negative: tuple[str, ...] = ()
    max_length: int = DEFAULT_MAX_LENGTH

    def __post_init__(self) -> None:
        if len(self.rendered_positive) > self.max_length:
            raise PromptError(
                f"positive prompt exceeds budget "
                f"({len(self.rendered_positive)} > {self.max_length} chars)"
            )

    @property
    def rendered_positive(self) -> str:
        return ", ".join(self.positive)

    @property
    def rendered_negative(self) -> str:
        return ", ".join(self.negative)


def build_vlm_questions() -> list[str]:
    """The seven describer questions, one per category, in fixed order."""
    lines = [
        line.strip()
        for line in _load_template("vlm_questions.txt").splitlines()
        if line.strip()
    ]
    if len(lines) != 7:
        raise ConfigError(f"question template must have 7 lines, found {len(lines)}")
    for line, category in zip(lines, CATEGORY_ORDER):
        if category.display_term not in line.lower():
            raise ConfigError(
                f"question {line!r} does not name its category "
                f"({category.display_term})"
            )
    return lines


def _fit_to_budget(
    fixed: list[str], droppable: list[str], tail: list[str], max_length: int
) -> list[str]:
    """Drop trailing low-priority tokens until the rendered prompt fits.

    ``fixed`` leads and is never dropped, ``tail`` (if any) is appended
    and never dropped; tokens are removed whole, last first.
    """
    droppable = list(droppable)
    while len(", ".join(fixed + droppable + tail)) > max_length and droppable:
        droppable.pop()
    if len(", ".join(fixed + droppable + tail)) > max_length:
        raise PromptError("prompt cannot fit the length budget")
    return fixed + droppable + tail


def build_generation_prompt(
    record: Union[SubjectRecord, AttributeDescription],
    rules: FeatureRules | None = None,
    max_length: int = DEFAULT_MAX_LENGTH,
) -> PromptSpec:
    """Build the identity-preserving generation prompt for a subject.

    The prompt is anchored on gender (required), then adds age, ethnic
    group, and hair values when known and allowed. On overflow the
    lowest-priority values are dropped whole (hair before ethnicity
    before age); the gender-bearing preamble always stays.
    """
    if rules is None:
        rules = FeatureRules()
    attrs = record.attributes

    gender = attrs[Category.GENDER]
    if not gender.known:
        raise PromptError(f"subject {record.subject_id}: gender unknown")
    if rules.mentions_excluded(str(gender.normalized)):
        raise PromptError(f"subject {record.subject_id}: unusable gender value")
    preamble = _load_template("generation_preamble.txt").strip().format(
        gender=gender.normalized
    )

    candidates: list[tuple[str, str]] = []  # (include name, token text)
    age = attrs[Category.AGE]
    if age.known:
        candidates.append(("age", f"{int(round(float(age.normalized)))} years old"))
    ethnicity = attrs[Category.ETHNIC_GROUP]
    if ethnicity.known:
        candidates.append(("ethnic group", str(ethnicity.normalized)))
    hair = attrs[Category.HAIR_COLOR]
    if hair.known:
        text = str(hair.normalized)
        token = text if "hair" in text.split() else f"{text} hair"
        candidates.append(("hair color", token))

    tokens = [
        token
        for name, token in candidates
        if name in rules.include_categories and not rules.mentions_excluded(token)
    ]
    positive = _fit_to_budget([preamble], tokens, [], max_length)
    return PromptSpec(positive=tuple(positive), negative=(), max_length=max_length)


def build_aging_prompt(
    base: PromptSpec, target_age: float, direction: AgeDirection
) -> PromptSpec:
    """Derive an age-transformation prompt from a generation prompt.

    The target age replaces any age token in the base prompt. Aging
    toward 60+ adds "wrinkles"; aging always pushes "child" and "baby"
    into the negative prompt, and de-aging pushes "wrinkles" there.
    """
    if target_age <= 0:
        raise UsageError(f"target_age must be > 0, got {target_age}")

    kept = [token for token in base.positive[1:] if not _AGE_TOKEN_RE.match(token)]
    tail = [f"aged {int(round(target_age))} years"]
    if direction is AgeDirection.AGE and target_age >= 60 and "wrinkles" not in kept:
        tail.append("wrinkles")

    negative = list(base.negative)
    if direction is AgeDirection.AGE:
        for term in ("child", "baby"):
            if term not in negative:
                negative.append(term)
    else:
        if "wrinkles" not in negative:
            negative.append("wrinkles")

    positive = _fit_to_budget([base.positive[0]], kept, tail, base.max_length)
    return PromptSpec(
        positive=tuple(positive),
        negative=tuple(negative),
        max_length=base.max_length,
    )
