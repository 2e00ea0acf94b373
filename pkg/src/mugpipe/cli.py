"""Command-line interface.

Subcommands: describe, denoise, augment, age, reid, score, pipeline,
report. Exit codes: 0 success, 2 validation error, 3 gateway error,
4 protocol error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .attributes import PROVENANCE_LABELS, load_subject_records
from .config import PipelineConfig, load_config
from .errors import MugpipeError, ValidationError
from .gateway import ModelGateway
from .imagefiles import load_image, save_image
from .metric import CohortRow
from .pipeline import (
    check_dataset_images,
    evaluate_embeddings,
    load_manifest,
    load_predictions,
    run_age,
    run_augment,
    run_describe,
    run_pipeline,
    run_reid,
    score_offline,
)
from .prompts import AgeDirection
from .reid import load_embeddings_jsonl
from .tvdenoise import DenoiseParams, GrayImage, denoise, denoise_rgb


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML or JSON run configuration")
    parser.add_argument(
        "--fixtures",
        type=Path,
        help="fixture backend root; each model kind is served from <dir>/<kind>",
    )
    parser.add_argument("--out", type=Path, help="output directory override")
    parser.add_argument(
        "--threshold", type=float, help="re-identification match threshold"
    )
    parser.add_argument(
        "--sweep",
        action="store_true",
        default=None,
        help="emit verification metrics at 50 evenly spaced thresholds",
    )


def _load_pipeline_config(args) -> PipelineConfig:
    if args.config is None:
        raise ValidationError("--config is required for this command")
    config = load_config(
        args.config,
        fixtures_root=args.fixtures,
        out_override=args.out,
        threshold_override=args.threshold,
        sweep_override=args.sweep,
    )
    config.validate_paths()
    return config


def _apply_prompt_overrides(config: PipelineConfig, args) -> PipelineConfig:
    excludes = getattr(args, "exclude_term", None) or []
    includes = getattr(args, "include_category", None) or []
    if not excludes and not includes:
        return config
    return replace(
        config,
        feature_rules=config.feature_rules.with_overrides(
            extra_excludes=excludes, extra_includes=includes
        ),
    )


def _gateway(config: PipelineConfig) -> ModelGateway:
    return ModelGateway(
        endpoints=config.endpoints,
        out_dir=config.out_dir,
        denoise_params=config.denoise,
        synonyms=config.synonyms,
    )


def _print_cohort(rows: list[CohortRow]) -> None:
    print("input_pictures  mean_accuracy  count")
    for row in rows:
        label = PROVENANCE_LABELS[row.provenance]
        print(f"{label:<15} {row.mean_accuracy:>13.3f} {row.count:>6}")


def cmd_describe(args) -> int:
    config = _load_pipeline_config(args)
    records = load_subject_records(config.dataset, config.synonyms)
    check_dataset_images(config, records)
    result = run_describe(config, _gateway(config), records)
    _print_cohort(result.cohort)
    if result.failures:
        print(f"{len(result.failures)} describe failure(s); see reports")
    return 0


def cmd_denoise(args) -> int:
    params = DenoiseParams(
        iterations=args.iterations,
        tv_weight=args.tv_weight,
        epsilon=args.epsilon,
        step=args.step,
    )
    image = load_image(args.input)
    if isinstance(image, GrayImage):
        result = denoise(image, params)
        expected = ".pgm"
    else:
        result = denoise_rgb(image, params)
        expected = ".png"
    output = Path(args.output)
    if output.suffix.lower() != expected:
        raise ValidationError(
            f"output for this input must be a {expected} file, got {output.name}"
        )
    output.parent.mkdir(parents=True, exist_ok=True)
    save_image(result, output)
    print(f"wrote {output}")
    return 0


def cmd_augment(args) -> int:
    config = _apply_prompt_overrides(_load_pipeline_config(args), args)
    records = load_subject_records(config.dataset, config.synonyms)
    check_dataset_images(config, records)
    prior = load_manifest(args.manifest) if args.manifest else None
    manifest = run_augment(config, _gateway(config), records, prior_manifest=prior)
    produced = sum(
        len(paths) for subjects in manifest["arms"].values() for paths in subjects.values()
    )
    print(f"generated {produced} image(s) across {len(manifest['arms'])} arm(s)")
    if manifest["skipped"]:
        print(f"skipped {len(manifest['skipped'])} subject(s); see manifest")
    return 0


def cmd_age(args) -> int:
    config = _apply_prompt_overrides(_load_pipeline_config(args), args)
    records = load_subject_records(config.dataset, config.synonyms)
    check_dataset_images(config, records)
    direction = AgeDirection(args.direction)
    results = run_age(config, _gateway(config), records, args.target_age, direction)
    for result in results:
        print(f"arm {result.arm}: metrics written to reports/reid")
    return 0


def cmd_reid(args) -> int:
    if args.ref_embeddings or args.probe_embeddings:
        if not (args.ref_embeddings and args.probe_embeddings):
            raise ValidationError(
                "--ref-embeddings and --probe-embeddings must be given together"
            )
        results = [_offline_reid(args)]
    else:
        config = _load_pipeline_config(args)
        records = load_subject_records(config.dataset, config.synonyms)
        manifest_path = args.manifest or config.out_dir / "reports" / "manifest.json"
        manifest = load_manifest(manifest_path)
        results = run_reid(config, _gateway(config), records, manifest)
    for result in results:
        distance = result.metrics.get("distance", {})
        accuracy = distance.get("identification_accuracy")
        if accuracy is not None:
            print(f"arm {result.arm}: identification accuracy {accuracy:.3f}")
        else:
            print(f"arm {result.arm}: matrices written (non-square, no accuracy)")
    return 0


def _offline_reid(args):
    """Evaluate pre-computed embedding files without any model backend."""
    if args.config is not None:
        config = _load_pipeline_config(args)
    else:
        config = PipelineConfig(
            dataset=Path(args.ref_embeddings),
            out_dir=Path(args.out) if args.out else Path("out"),
            reid_threshold=args.threshold,
            reid_sweep=bool(args.sweep),
        )
        config.validate_paths()
    references = load_embeddings_jsonl(args.ref_embeddings)
    probes = load_embeddings_jsonl(args.probe_embeddings)
    return evaluate_embeddings(config, references, probes)


def cmd_score(args) -> int:
    if args.config is not None:
        config = load_config(
            args.config,
            out_override=args.out,
            threshold_override=args.threshold,
            sweep_override=args.sweep,
        )
        if args.records is not None:
            config = replace(config, dataset=Path(args.records))
    else:
        if args.records is None:
            raise ValidationError("--records is required without --config")
        config = PipelineConfig(
            dataset=Path(args.records),
            out_dir=Path(args.out) if args.out else Path("out"),
        )
    config.validate_paths()
    records = load_subject_records(config.dataset, config.synonyms)
    if not records:
        raise ValidationError("dataset is empty")
    descriptions = load_predictions(args.predictions, config.synonyms)
    result = score_offline(config, records, descriptions)
    _print_cohort(result.cohort)
    return 0


def cmd_pipeline(args) -> int:
    config = _apply_prompt_overrides(_load_pipeline_config(args), args)
    records = load_subject_records(config.dataset, config.synonyms)
    check_dataset_images(config, records)
    report = run_pipeline(config, _gateway(config), records)
    print(f"described {report['described']} image(s)")
    for arm, metrics in sorted(report["arms"].items()):
        accuracy = metrics.get("distance", {}).get("identification_accuracy")
        if accuracy is not None:
            print(f"arm {arm}: identification accuracy {accuracy:.3f}")
    print(f"reports under {config.out_dir / 'reports'}")
    return 0


_GNUPLOT_HEADER = """\
# Heatmap plots for re-identification confusion matrices.
set datafile separator ','
set palette rgbformulae 33,13,10
set size square
"""


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else None
    if out_dir is None:
        raise ValidationError("--out is required: the run directory to report on")
    reid_dir = out_dir / "reports" / "reid"
    matrices = sorted(reid_dir.glob("*_distance.csv")) + sorted(
        reid_dir.glob("*_similarity.csv")
    )
    if not matrices:
        raise ValidationError(f"no confusion matrices under {reid_dir}")
    if not args.emit_gnuplot:
        for path in matrices:
            print(path)
        return 0
    lines = [_GNUPLOT_HEADER]
    for path in matrices:
        stem = path.stem
        lines.append(f"set terminal pngcairo size 800,700")
        lines.append(f"set output '{stem}.png'")
        lines.append(f"set title '{stem}'")
        lines.append(
            f"plot '{path.name}' matrix rowheaders columnheaders with image notitle"
        )
        lines.append("")
    script = reid_dir / "plot.gp"
    script.write_text("\n".join(lines), encoding="utf-8")
    print(f"wrote {script}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mugpipe",
        description="Forensic mugshot pipeline: enhance, describe, score, "
        "augment, and re-identify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="describe and score every subject image")
    _add_common(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("denoise", help="total-variation denoise one image")
    p.add_argument("input", help="input image (PGM P5 or PNG)")
    p.add_argument("output", help="output image path")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--tv-weight", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("augment", help="generate synthetic mugshots")
    _add_common(p)
    p.add_argument("--manifest", type=Path, help="prior manifest for the "
                   "original_plus_generated arm")
    p.add_argument("--exclude-term", action="append", dest="exclude_term")
    p.add_argument("--include-category", action="append", dest="include_category")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("age", help="age/de-age subjects and evaluate")
    _add_common(p)
    p.add_argument("--target-age", type=float, required=True)
    p.add_argument("--direction", choices=[d.value for d in AgeDirection],
                   required=True)
    p.add_argument("--exclude-term", action="append", dest="exclude_term")
    p.add_argument("--include-category", action="append", dest="include_category")
    p.set_defaults(func=cmd_age)

    p = sub.add_parser("reid", help="re-identification evaluation of a manifest")
    _add_common(p)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--ref-embeddings", type=Path,
                   help="pre-computed reference embeddings (JSONL); skips the gateway")
    p.add_argument("--probe-embeddings", type=Path,
                   help="pre-computed probe embeddings (JSONL)")
    p.set_defaults(func=cmd_reid)

    p = sub.add_parser("score", help="score pre-extracted descriptions offline")
    _add_common(p)
    p.add_argument("--records", type=Path, help="subject records JSON")
    p.add_argument("--predictions", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pipeline", help="full describe + augment + reid run")
    _add_common(p)
    p.add_argument("--manifest", type=Path, help="prior manifest reference")
    p.add_argument("--exclude-term", action="append", dest="exclude_term")
    p.add_argument("--include-category", action="append", dest="include_category")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="list matrices / emit a gnuplot script")
    p.add_argument("--out", type=Path, help="run output directory")
    p.add_argument("--emit-gnuplot", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MugpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
