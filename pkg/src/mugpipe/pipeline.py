"""Pipeline stages: enhance+describe+score, augment, re-identify, age.

Every stage writes deterministic report files under <out_dir>/reports.
All image paths stored in reports and manifests are relative (to the
dataset directory for originals, to the output directory for produced
images) so a rerun against the same fixtures is byte-identical;
wall-clock timestamps exist only in the gateway journal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .attributes import (
    CATEGORY_ORDER,
    AttributeDescription,
    Category,
    Provenance,
    SubjectRecord,
    SynonymTable,
    description_from_answers,
)
from .config import GenerationArm, PipelineConfig
from .errors import (
    EvaluationError,
    GatewayError,
    PromptError,
    ProtocolError,
    ScoringError,
    UsageError,
    ValidationError,
)
from .gateway import BackendKind, EnhanceMethod, GenerationRequest, ModelGateway
from .metric import (
    CohortRow,
    DistanceReport,
    score_cohort,
    score_description,
    write_cohort_csv,
    write_cohort_json,
    write_reports_csv,
    write_reports_json,
)
from .prompts import (
    AgeDirection,
    build_aging_prompt,
    build_generation_prompt,
    build_vlm_questions,
)
from .reid import (
    Aggregation,
    ConfusionMatrix,
    Embedding,
    Semantics,
    build_confusion_matrix,
    identification_accuracy,
    mean_genuine_score,
    threshold_sweep,
    verification_metrics,
    write_embeddings_jsonl,
    write_matrix_csv,
    write_matrix_json,
    write_sweep_csv,
)


@dataclass(frozen=True)
class StageFailure:
    """A non-fatal per-subject failure recorded in the run report."""

    subject_id: str
    stage: str
    arm: str
    error_type: str
    message: str

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "stage": self.stage,
            "arm": self.arm,
            "error_type": self.error_type,
            "message": self.message,
        }


@dataclass
class DescribeResult:
    descriptions: list[AttributeDescription]
    reports: list[DistanceReport]
    cohort: list[CohortRow]
    failures: list[StageFailure] = field(default_factory=list)


@dataclass
class ReidArmResult:
    arm: str
    distance: ConfusionMatrix
    similarity: ConfusionMatrix
    metrics: dict


def _reports_dir(config: PipelineConfig) -> Path:
    path = config.out_dir / "reports"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_reference(config: PipelineConfig, name: str) -> Path:
    path = Path(name)
    if not path.is_absolute():
        path = config.dataset.parent / path
    if not path.exists():
        raise ValidationError(f"reference image not found: {path}")
    return path


def _out_relative(config: PipelineConfig, path: Path) -> str:
    return path.relative_to(config.out_dir).as_posix()


def check_dataset_images(config: PipelineConfig, records: Sequence[SubjectRecord]) -> None:
    """Fail early if any referenced image file is missing."""
    for record in records:
        for name in record.reference_images:
            _resolve_reference(config, name)


_FAILURE_KINDS = (ValidationError, GatewayError, ProtocolError, ScoringError, UsageError)


def run_describe(
    config: PipelineConfig,
    gateway: ModelGateway,
    records: Sequence[SubjectRecord],
) -> DescribeResult:
    """Describe every subject image across all enhancement arms and score
    the answers against the ground truth."""
    if not records:
        raise ValidationError("dataset is empty")
    gateway_kinds = {BackendKind.DESCRIBE}
    if any(m is not EnhanceMethod.TV_DENOISE for m in config.enhancements):
        gateway_kinds.add(BackendKind.ENHANCE)  # TV denoising is native
    for kind in gateway_kinds:
        if kind not in config.endpoints:
            raise ValidationError(f"no {kind.value} endpoint configured")
    questions = build_vlm_questions()

    result = DescribeResult(descriptions=[], reports=[], cohort=[])
    arms: list[tuple[Provenance, object]] = [(Provenance.ORIGINAL, None)]
    arms += [(m.provenance, m) for m in config.enhancements]

    for record in records:
        for provenance, method in arms:
            for name in record.reference_images:
                try:
                    source = _resolve_reference(config, name)
                    if method is None:
                        image, label = source, name
                    else:
                        image = gateway.enhance(source, method)
                        label = _out_relative(config, image)
                    description = gateway.describe(
                        image,
                        questions,
                        subject_id=record.subject_id,
                        provenance=provenance,
                        source_label=label,
                    )
                    report = score_description(
                        record, description, config.thresholds, config.equivalence
                    )
                except _FAILURE_KINDS as exc:
                    result.failures.append(
                        StageFailure(
                            subject_id=record.subject_id,
                            stage="describe",
                            arm=provenance.value,
                            error_type=type(exc).__name__,
                            message=str(exc),
                        )
                    )
                    continue
                result.descriptions.append(description)
                result.reports.append(report)

    if not result.reports:
        raise ValidationError("describe produced no scorable output; see failures")
    result.cohort = score_cohort(result.reports)

    reports_dir = _reports_dir(config)
    write_reports_json(result.reports, reports_dir / "distance_reports.json")
    write_reports_csv(result.reports, reports_dir / "distance_reports.csv")
    write_cohort_csv(result.cohort, reports_dir / "cohort.csv")
    write_cohort_json(result.cohort, reports_dir / "cohort.json")
    _write_descriptions(result.descriptions, reports_dir / "descriptions.json")
    _write_failures(result.failures, reports_dir / "describe_failures.json")
    return result


def _write_descriptions(
    descriptions: Sequence[AttributeDescription], path: Path
) -> None:
    payload = [
        {
            "subject_id": d.subject_id,
            "source_image": d.source_image,
            "provenance": d.provenance.value,
            "attributes": {
                c.value: {
                    "raw": d.attributes[c].raw,
                    "normalized": d.attributes[c].normalized,
                    "known": d.attributes[c].known,
                }
                for c in CATEGORY_ORDER
            },
        }
        for d in descriptions
    ]
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_failures(failures: Sequence[StageFailure], path: Path) -> None:
    payload = [f.to_dict() for f in failures]
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def run_augment(
    config: PipelineConfig,
    gateway: ModelGateway,
    records: Sequence[SubjectRecord],
    prior_manifest: Mapping | None = None,
) -> dict:
    """Generate synthetic images per subject for each configured input arm.

    Returns (and writes) a manifest mapping arm -> subject -> generated
    image paths. The original_plus_generated arm reuses a prior run's
    manifest when given one, else this run's original-arm outputs.
    """
    if not records:
        raise ValidationError("dataset is empty")
    if BackendKind.GENERATE not in config.endpoints:
        raise ValidationError("no generate endpoint configured")
    needs_enhance = GenerationArm.ORIGINAL_PLUS_ENHANCED in config.generation_arms and any(
        m is not EnhanceMethod.TV_DENOISE for m in config.enhancements
    )
    if needs_enhance and BackendKind.ENHANCE not in config.endpoints:
        raise ValidationError("original_plus_enhanced arm needs an enhance endpoint")

    manifest: dict = {
        "count": config.generation_count,
        "arms": {arm.value: {} for arm in config.generation_arms},
        "skipped": [],
    }
    failures: list[StageFailure] = []

    for record in records:
        if not record.reference_images:
            manifest["skipped"].append(
                {"subject_id": record.subject_id, "reason": "no reference images"}
            )
            continue
        try:
            prompt = build_generation_prompt(
                record, config.feature_rules, config.prompt_max_length
            )
        except PromptError as exc:
            manifest["skipped"].append(
                {"subject_id": record.subject_id, "reason": str(exc)}
            )
            continue

        originals = [
            _resolve_reference(config, name) for name in record.reference_images
        ]
        for arm in config.generation_arms:
            try:
                inputs = list(originals)
                if arm is GenerationArm.ORIGINAL_PLUS_ENHANCED:
                    for method in config.enhancements:
                        inputs += [gateway.enhance(p, method) for p in originals]
                elif arm is GenerationArm.ORIGINAL_PLUS_GENERATED:
                    inputs += _generated_arm_inputs(
                        config, manifest, prior_manifest, record.subject_id
                    )
                request = GenerationRequest(
                    input_images=tuple(str(p) for p in inputs),
                    prompt=prompt,
                    sample_steps=config.sample_steps,
                    style_strength_percent=config.style_strength_percent,
                    count=config.generation_count,
                )
                produced = gateway.generate(request)
            except _FAILURE_KINDS as exc:
                failures.append(
                    StageFailure(
                        subject_id=record.subject_id,
                        stage="augment",
                        arm=arm.value,
                        error_type=type(exc).__name__,
                        message=str(exc),
                    )
                )
                continue
            manifest["arms"][arm.value][record.subject_id] = [
                _out_relative(config, p) for p in produced
            ]

    reports_dir = _reports_dir(config)
    (reports_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_failures(failures, reports_dir / "augment_failures.json")
    return manifest


def _generated_arm_inputs(
    config: PipelineConfig,
    manifest: Mapping,
    prior_manifest: Mapping | None,
    subject_id: str,
) -> list[Path]:
    """Input images for the original_plus_generated arm."""
    source = prior_manifest if prior_manifest is not None else manifest
    generated = source.get("arms", {}).get(GenerationArm.ORIGINAL.value, {})
    names = generated.get(subject_id)
    if not names:
        raise ValidationError(
            f"subject {subject_id}: no previously generated images available "
            f"for the original_plus_generated arm"
        )
    return [config.out_dir / name for name in names]


def load_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed manifest: {exc}")
    if not isinstance(manifest, dict) or "arms" not in manifest:
        raise ValidationError(f"{path}: manifest must contain an 'arms' object")
    return manifest


def run_reid(
    config: PipelineConfig,
    gateway: ModelGateway,
    records: Sequence[SubjectRecord],
    manifest: Mapping,
) -> list[ReidArmResult]:
    """Embed references and generated probes, then build per-arm
    distance/similarity confusion matrices and their metrics."""
    arms = {
        name: subjects
        for name, subjects in manifest.get("arms", {}).items()
        if subjects
    }
    if not arms:
        raise ValidationError("manifest holds no generated images")
    if BackendKind.EMBED not in config.endpoints:
        raise ValidationError("no embed endpoint configured")

    by_id = {record.subject_id: record for record in records}
    references: list[Embedding] = []
    for record in records:
        for name in record.reference_images:
            source = _resolve_reference(config, name)
            references.append(
                gateway.embed(
                    source,
                    subject_id=record.subject_id,
                    provenance=Provenance.ORIGINAL,
                    image_label=name,
                )
            )
    if not references:
        raise ValidationError("no reference images to embed")

    reid_dir = _reports_dir(config) / "reid"
    reid_dir.mkdir(parents=True, exist_ok=True)
    write_embeddings_jsonl(references, reid_dir / "reference_embeddings.jsonl")

    results: list[ReidArmResult] = []
    failures: list[StageFailure] = []
    for arm_name in sorted(arms):
        try:
            probes: list[Embedding] = []
            for subject_id in sorted(arms[arm_name]):
                if subject_id not in by_id:
                    raise ValidationError(
                        f"manifest subject {subject_id!r} missing from dataset"
                    )
                for name in arms[arm_name][subject_id]:
                    image = config.out_dir / name
                    if not image.exists():
                        raise ValidationError(f"generated image missing: {image}")
                    probes.append(
                        gateway.embed(
                            image,
                            subject_id=subject_id,
                            provenance=Provenance.GENERATED,
                            image_label=name,
                        )
                    )
            write_embeddings_jsonl(
                probes, reid_dir / f"{arm_name}_probe_embeddings.jsonl"
            )
            results.append(
                _evaluate_arm(config, arm_name, references, probes)
            )
        except (ProtocolError, ValidationError, EvaluationError, GatewayError) as exc:
            failures.append(
                StageFailure(
                    subject_id="*",
                    stage="reid",
                    arm=arm_name,
                    error_type=type(exc).__name__,
                    message=str(exc),
                )
            )
    _write_failures(failures, _reports_dir(config) / "reid_failures.json")
    if not results:
        raise ValidationError("re-identification failed for every arm; see failures")
    return results


def _evaluate_arm(
    config: PipelineConfig,
    arm_name: str,
    references: Sequence[Embedding],
    probes: Sequence[Embedding],
) -> ReidArmResult:
    distance = build_confusion_matrix(
        references, probes, Semantics.DISTANCE, Aggregation.MEAN
    )
    similarity = build_confusion_matrix(
        references, probes, Semantics.SIMILARITY, Aggregation.MEAN
    )
    thresholds = {
        "distance": config.reid_threshold,
        "similarity": config.reid_similarity_threshold,
    }
    metrics: dict = {"arm": arm_name}
    for label, matrix in (("distance", distance), ("similarity", similarity)):
        entry: dict = {}
        if matrix.is_square:
            entry["identification_accuracy"] = identification_accuracy(matrix)
            entry["mean_genuine_score"] = mean_genuine_score(matrix)
            if thresholds[label] is not None:
                entry["verification"] = verification_metrics(
                    matrix, thresholds[label]
                ).to_dict()
        metrics[label] = entry

    reid_dir = _reports_dir(config) / "reid"
    reid_dir.mkdir(parents=True, exist_ok=True)
    for label, matrix in (("distance", distance), ("similarity", similarity)):
        write_matrix_csv(matrix, reid_dir / f"{arm_name}_{label}.csv")
        write_matrix_json(matrix, reid_dir / f"{arm_name}_{label}.json")
        if config.reid_sweep and matrix.is_square:
            write_sweep_csv(
                threshold_sweep(matrix),
                reid_dir / f"{arm_name}_{label}_sweep.csv",
            )
    (reid_dir / f"{arm_name}_metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ReidArmResult(
        arm=arm_name, distance=distance, similarity=similarity, metrics=metrics
    )


def evaluate_embeddings(
    config: PipelineConfig,
    references: Sequence[Embedding],
    probes: Sequence[Embedding],
    arm_name: str = "offline",
) -> ReidArmResult:
    """Matrices and metrics from pre-computed embeddings (no gateway)."""
    return _evaluate_arm(config, arm_name, references, probes)


def run_age(
    config: PipelineConfig,
    gateway: ModelGateway,
    records: Sequence[SubjectRecord],
    target_age: float,
    direction: AgeDirection,
) -> list[ReidArmResult]:
    """Generate age-shifted images and evaluate them against the
    target-age reference pictures.

    Each record must carry at least two reference images: index 0 is the
    input picture, index 1 the picture at the target age.
    """
    if not records:
        raise ValidationError("dataset is empty")
    for kind in (BackendKind.GENERATE, BackendKind.EMBED):
        if kind not in config.endpoints:
            raise ValidationError(f"no {kind.value} endpoint configured")
    for record in records:
        if len(record.reference_images) < 2:
            raise ValidationError(
                f"subject {record.subject_id}: aging needs [input, target] "
                f"reference image pairs"
            )

    arm_name = "aging" if direction is AgeDirection.AGE else "deaging"
    manifest: dict = {"count": config.generation_count, "arms": {arm_name: {}}, "skipped": []}
    targets: list[Embedding] = []
    probes: list[Embedding] = []

    for record in records:
        try:
            base = build_generation_prompt(
                record, config.feature_rules, config.prompt_max_length
            )
            prompt = build_aging_prompt(base, target_age, direction)
        except PromptError as exc:
            manifest["skipped"].append(
                {"subject_id": record.subject_id, "reason": str(exc)}
            )
            continue
        source = _resolve_reference(config, record.reference_images[0])
        request = GenerationRequest(
            input_images=(str(source),),
            prompt=prompt,
            sample_steps=config.sample_steps,
            style_strength_percent=config.style_strength_percent,
            count=config.generation_count,
        )
        produced = gateway.generate(request)
        manifest["arms"][arm_name][record.subject_id] = [
            _out_relative(config, p) for p in produced
        ]
        target_name = record.reference_images[1]
        targets.append(
            gateway.embed(
                _resolve_reference(config, target_name),
                subject_id=record.subject_id,
                provenance=Provenance.ORIGINAL,
                image_label=target_name,
            )
        )
        for path in produced:
            probes.append(
                gateway.embed(
                    path,
                    subject_id=record.subject_id,
                    provenance=Provenance.GENERATED,
                    image_label=_out_relative(config, path),
                )
            )

    if not targets:
        raise ValidationError("no subject could be aged; see manifest skips")
    reports_dir = _reports_dir(config)
    (reports_dir / f"{arm_name}_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return [_evaluate_arm(config, arm_name, targets, probes)]


def load_predictions(
    path: str | Path, synonyms: SynonymTable | None = None
) -> list[AttributeDescription]:
    """Load pre-extracted descriptions for offline (metric-only) scoring.

    Format: JSON array of {"subject_id", "source_image", "provenance",
    "answers": {category: raw text or null}}.
    """
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"predictions file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}")
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON array")

    descriptions = []
    for index, item in enumerate(data):
        where = f"{path}: prediction {index}"
        if not isinstance(item, dict):
            raise ValidationError(f"{where}: expected an object")
        try:
            provenance = Provenance(item.get("provenance", "original"))
        except ValueError:
            raise ValidationError(
                f"{where}: unknown provenance {item.get('provenance')!r}"
            )
        answers_raw = item.get("answers")
        if not isinstance(answers_raw, dict):
            raise ValidationError(f"{where}: missing answers object")
        answers: dict[Category, str | None] = {}
        for key, value in answers_raw.items():
            try:
                category = Category(key)
            except ValueError:
                raise ValidationError(f"{where}: unknown category {key!r}")
            if value is not None and not isinstance(value, str):
                raise ValidationError(f"{where}: answer for {key} must be text")
            answers[category] = value
        subject_id = item.get("subject_id")
        if not isinstance(subject_id, str) or not subject_id:
            raise ValidationError(f"{where}: missing subject_id")
        descriptions.append(
            description_from_answers(
                subject_id=subject_id,
                source_image=str(item.get("source_image", "")),
                provenance=provenance,
                answers=answers,
                synonyms=synonyms,
            )
        )
    return descriptions


def score_offline(
    config: PipelineConfig,
    records: Sequence[SubjectRecord],
    descriptions: Sequence[AttributeDescription],
) -> DescribeResult:
    """Score pre-extracted descriptions against the dataset records."""
    by_id = {record.subject_id: record for record in records}
    result = DescribeResult(descriptions=list(descriptions), reports=[], cohort=[])
    for description in descriptions:
        record = by_id.get(description.subject_id)
        if record is None:
            result.failures.append(
                StageFailure(
                    subject_id=description.subject_id,
                    stage="score",
                    arm=description.provenance.value,
                    error_type="ValidationError",
                    message="subject not present in dataset",
                )
            )
            continue
        try:
            result.reports.append(
                score_description(
                    record, description, config.thresholds, config.equivalence
                )
            )
        except _FAILURE_KINDS as exc:
            result.failures.append(
                StageFailure(
                    subject_id=description.subject_id,
                    stage="score",
                    arm=description.provenance.value,
                    error_type=type(exc).__name__,
                    message=str(exc),
                )
            )
    if not result.reports:
        raise ScoringError("no predictions could be scored")
    result.cohort = score_cohort(result.reports)

    reports_dir = _reports_dir(config)
    write_reports_json(result.reports, reports_dir / "distance_reports.json")
    write_reports_csv(result.reports, reports_dir / "distance_reports.csv")
    write_cohort_csv(result.cohort, reports_dir / "cohort.csv")
    write_cohort_json(result.cohort, reports_dir / "cohort.json")
    _write_failures(result.failures, reports_dir / "score_failures.json")
    return result


def run_pipeline(
    config: PipelineConfig,
    gateway: ModelGateway,
    records: Sequence[SubjectRecord],
) -> dict:
    """Full describe -> augment -> re-identify run; returns the run report."""
    describe_result = run_describe(config, gateway, records)
    manifest = run_augment(config, gateway, records)
    reid_results = run_reid(config, gateway, records, manifest)

    report = {
        "cohort": [
            {
                "provenance": row.provenance.value,
                "mean_accuracy": row.mean_accuracy,
                "count": row.count,
            }
            for row in describe_result.cohort
        ],
        "described": len(describe_result.reports),
        "describe_failures": len(describe_result.failures),
        "arms": {r.arm: r.metrics for r in reid_results},
        "distance_reports": "reports/distance_reports.json",
        "manifest": "reports/manifest.json",
        "journal": "journal.jsonl",
    }
    _check_report_images(config, manifest)
    (_reports_dir(config) / "run_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report


def _check_report_images(config: PipelineConfig, manifest: Mapping) -> None:
    for subjects in manifest.get("arms", {}).values():
        for names in subjects.values():
            for name in names:
                if not (config.out_dir / name).exists():
                    raise ValidationError(f"report references missing image {name}")
