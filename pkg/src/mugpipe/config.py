"""Run configuration: defaults, config-file parsing, environment overrides.

Config files are TOML or JSON (by extension). Endpoint locations can be
overridden per backend kind through MUGPIPE_<KIND>_URL /
MUGPIPE_<KIND>_FIXTURES environment variables, and a fixtures root
directory maps every kind to <root>/<kind>.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attributes import Category, SynonymTable, default_synonym_table
from .errors import ConfigError, ValidationError
from .gateway import BackendEndpoint, BackendKind, EnhanceMethod
from .metric import EquivalenceTable, NumericThresholds, default_equivalence_table
from .prompts import DEFAULT_MAX_LENGTH, FeatureRules
from .tvdenoise import DenoiseParams


class GenerationArm(str, Enum):
    """Input mixes for the augmentation stage."""

    ORIGINAL = "original"
    ORIGINAL_PLUS_ENHANCED = "original_plus_enhanced"
    ORIGINAL_PLUS_GENERATED = "original_plus_generated"


@dataclass(frozen=True)
class PipelineConfig:
    dataset: Path
    out_dir: Path
    enhancements: tuple[EnhanceMethod, ...] = (EnhanceMethod.TV_DENOISE,)
    thresholds: NumericThresholds = field(default_factory=NumericThresholds)
    equivalence: EquivalenceTable = field(default_factory=default_equivalence_table)
    synonyms: SynonymTable = field(default_factory=default_synonym_table)
    feature_rules: FeatureRules = field(default_factory=FeatureRules)
    prompt_max_length: int = DEFAULT_MAX_LENGTH
    generation_count: int = 4
    sample_steps: int = 50
    style_strength_percent: int = 20
    generation_arms: tuple[GenerationArm, ...] = (GenerationArm.ORIGINAL,)
    reid_threshold: float | None = None
    reid_similarity_threshold: float | None = None
    reid_sweep: bool = False
    denoise: DenoiseParams = field(default_factory=DenoiseParams)
    endpoints: Mapping[BackendKind, BackendEndpoint] = field(default_factory=dict)

    def validate_paths(self) -> None:
        """Check the dataset exists and the output directory is writable."""
        if not self.dataset.exists():
            raise ValidationError(f"dataset file not found: {self.dataset}")
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            probe = self.out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ValidationError(f"output directory not writable: {exc}")
        for endpoint in self.endpoints.values():
            if endpoint.fixture_dir is not None and not Path(endpoint.fixture_dir).is_dir():
                raise ValidationError(
                    f"{endpoint.kind.value}: fixture directory not found: "
                    f"{endpoint.fixture_dir}"
                )


def _read_config_file(path: Path) -> dict:
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text("utf-8"))
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}")


def _parse_category(name: str, where: str) -> Category:
    try:
        return Category(name)
    except ValueError:
        raise ConfigError(f"{where}: unknown category {name!r}")


def _parse_endpoint(kind: BackendKind, section: Mapping, base: Path) -> BackendEndpoint:
    url = section.get("url")
    fixtures = section.get("fixtures")
    if fixtures is not None:
        fixtures = base / fixtures if not Path(fixtures).is_absolute() else Path(fixtures)
    try:
        return BackendEndpoint(
            kind=kind,
            url=url,
            fixture_dir=fixtures,
            timeout=float(section.get("timeout", 30.0)),
            max_retries=int(section.get("max_retries", 2)),
            token=section.get("token"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"endpoints.{kind.value}: {exc}")


_KNOWN_SECTIONS = {
    "dataset", "out_dir", "enhancements", "thresholds", "equivalence",
    "synonyms", "prompts", "generation", "reid", "denoise", "endpoints",
}


def load_config(
    path: str | Path,
    fixtures_root: str | Path | None = None,
    out_override: str | Path | None = None,
    threshold_override: float | None = None,
    sweep_override: bool | None = None,
    env: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Load a TOML/JSON config file and apply CLI/environment overrides."""
    path = Path(path)
    raw = _read_config_file(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a table/object")
    unknown = set(raw) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    base = path.parent

    if "dataset" not in raw:
        raise ConfigError(f"{path}: missing required key 'dataset'")
    dataset = base / raw["dataset"]
    out_dir = Path(out_override) if out_override else base / raw.get("out_dir", "out")

    try:
        enhancements = tuple(
            EnhanceMethod(name) for name in raw.get("enhancements", ["tv_denoise"])
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: bad enhancement method: {exc}")

    thr = raw.get("thresholds", {})
    thresholds = NumericThresholds(
        age=float(thr.get("age", 10.0)),
        height=float(thr.get("height", 15.0)),
        weight=float(thr.get("weight", 15.0)),
    )

    eq_section = raw.get("equivalence", {})
    extra_pairs = {
        _parse_category(name, "equivalence.pairs"): [tuple(p) for p in pairs]
        for name, pairs in eq_section.get("pairs", {}).items()
    }
    equivalence = default_equivalence_table().merged(
        extra_pairs, replace=bool(eq_section.get("replace_defaults", False))
    )

    syn_section = raw.get("synonyms", {})
    extra_syn = {
        _parse_category(name, "synonyms"): [
            (surface, target) for surface, target in mapping.items()
        ]
        for name, mapping in syn_section.items()
    }
    synonyms = default_synonym_table().merged(extra_syn)

    prompt_section = raw.get("prompts", {})
    feature_rules = FeatureRules().with_overrides(
        extra_excludes=prompt_section.get("exclude_terms", []),
        extra_includes=prompt_section.get("include_categories", []),
    )
    prompt_max_length = int(prompt_section.get("max_length", DEFAULT_MAX_LENGTH))

    gen_section = raw.get("generation", {})
    try:
        generation_arms = tuple(
            GenerationArm(name) for name in gen_section.get("arms", ["original"])
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: bad generation arm: {exc}")

    reid_section = raw.get("reid", {})
    reid_threshold = reid_section.get("threshold")
    if threshold_override is not None:
        reid_threshold = threshold_override
    reid_similarity = reid_section.get("similarity_threshold")
    reid_sweep = bool(reid_section.get("sweep", False))
    if sweep_override is not None:
        reid_sweep = sweep_override

    dn = raw.get("denoise", {})
    denoise_params = DenoiseParams(
        iterations=int(dn.get("iterations", 200)),
        tv_weight=float(dn.get("tv_weight", 0.1)),
        epsilon=float(dn.get("epsilon", 1e-3)),
        step=float(dn.get("step", 0.05)),
    )

    endpoints: dict[BackendKind, BackendEndpoint] = {}
    for kind_name, section in raw.get("endpoints", {}).items():
        try:
            kind = BackendKind(kind_name)
        except ValueError:
            raise ConfigError(f"{path}: unknown endpoint kind {kind_name!r}")
        endpoints[kind] = _parse_endpoint(kind, section, base)

    env = os.environ if env is None else env
    for kind in BackendKind:
        url_var = f"MUGPIPE_{kind.value.upper()}_URL"
        fix_var = f"MUGPIPE_{kind.value.upper()}_FIXTURES"
        if env.get(url_var):
            endpoints[kind] = BackendEndpoint(kind=kind, url=env[url_var])
        elif env.get(fix_var):
            endpoints[kind] = BackendEndpoint(
                kind=kind, fixture_dir=Path(env[fix_var])
            )
    if fixtures_root is not None:
        root = Path(fixtures_root)
        for kind in BackendKind:
            endpoints[kind] = BackendEndpoint(
                kind=kind, fixture_dir=root / kind.value
            )

    return PipelineConfig(
        dataset=dataset,
        out_dir=out_dir,
        enhancements=enhancements,
        thresholds=thresholds,
        equivalence=equivalence,
        synonyms=synonyms,
        feature_rules=feature_rules,
        prompt_max_length=prompt_max_length,
        generation_count=int(gen_section.get("count", 4)),
        sample_steps=int(gen_section.get("sample_steps", 50)),
        style_strength_percent=int(gen_section.get("style_strength_percent", 20)),
        generation_arms=generation_arms,
        reid_threshold=None if reid_threshold is None else float(reid_threshold),
        reid_similarity_threshold=(
            None if reid_similarity is None else float(reid_similarity)
        ),
        reid_sweep=reid_sweep,
        denoise=denoise_params,
        endpoints=endpoints,
    )
