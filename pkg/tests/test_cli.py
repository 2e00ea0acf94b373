from __future__ import annotations

import json

import numpy as np

from conftest import SUBJECTS, build_world, make_png
from mugpipe.cli import main
from mugpipe.gateway import BackendKind, fixture_digest
from mugpipe.imagefiles import read_pgm, read_png, write_pgm
from mugpipe.tvdenoise import GrayImage, total_variation


def _args(world, command, out_name="out", *extra):
    return [
        command,
        "--config", str(world.config),
        "--fixtures", str(world.fixtures),
        "--out", str(world.root / out_name),
        *extra,
    ]


def test_describe_command(tmp_path, capsys):
    world = build_world(tmp_path)
    assert main(_args(world, "describe")) == 0
    out = capsys.readouterr().out
    assert "Original" in out and "TVD" in out
    assert (world.root / "out" / "reports" / "cohort.csv").exists()


def test_pipeline_command(tmp_path, capsys):
    world = build_world(tmp_path)
    assert main(_args(world, "pipeline")) == 0
    out = capsys.readouterr().out
    assert "identification accuracy" in out
    assert (world.root / "out" / "reports" / "run_report.json").exists()


def test_augment_then_reid_commands(tmp_path):
    world = build_world(tmp_path)
    assert main(_args(world, "augment")) == 0
    manifest = world.root / "out" / "reports" / "manifest.json"
    assert manifest.exists()
    assert main(_args(world, "reid", "out", "--manifest", str(manifest))) == 0
    assert (world.root / "out" / "reports" / "reid" / "original_distance.csv").exists()


def test_age_command(tmp_path):
    from conftest import build_aging_world

    world = build_aging_world(tmp_path)
    code = main(
        _args(world, "age", "out", "--target-age", "70", "--direction", "age")
    )
    assert code == 0
    assert (world.root / "out" / "reports" / "aging_manifest.json").exists()


def test_denoise_command_pgm(tmp_path, capsys):
    rng = np.random.default_rng(0)
    noisy = np.full((16, 16), 0.5)
    noisy[rng.integers(0, 16, 10), rng.integers(0, 16, 10)] = 1.0
    src = tmp_path / "in.pgm"
    write_pgm(GrayImage(noisy), src)
    dst = tmp_path / "out.pgm"
    assert main(["denoise", str(src), str(dst), "--iterations", "50"]) == 0
    assert total_variation(read_pgm(dst)) < total_variation(read_pgm(src))


def test_denoise_command_png(tmp_path):
    src = tmp_path / "in.png"
    src.write_bytes(make_png((120, 60, 30)))
    dst = tmp_path / "out.png"
    assert main(["denoise", str(src), str(dst), "--iterations", "10"]) == 0
    assert read_png(dst).pixels.shape == (8, 8, 3)


def test_denoise_extension_mismatch_exits_2(tmp_path, capsys):
    src = tmp_path / "in.png"
    src.write_bytes(make_png((1, 2, 3)))
    assert main(["denoise", str(src), str(tmp_path / "out.pgm")]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["describe"]) == 2
    assert "config" in capsys.readouterr().err


def test_gateway_failure_exits_3(tmp_path, capsys):
    world = build_world(tmp_path)
    assert main(_args(world, "pipeline")) == 0
    # remove a reference embedding fixture: reid can no longer embed refs
    ref_bytes = (world.root / "data" / "images" / "s01.png").read_bytes()
    digest = fixture_digest(BackendKind.EMBED, [ref_bytes], {})
    (world.fixtures / "embed" / f"{digest}.json").unlink()
    manifest = world.root / "out" / "reports" / "manifest.json"
    assert main(_args(world, "reid", "out", "--manifest", str(manifest))) == 3


def test_protocol_failure_exits_4(tmp_path):
    world = build_world(tmp_path)
    assert main(_args(world, "pipeline")) == 0
    ref_bytes = (world.root / "data" / "images" / "s01.png").read_bytes()
    digest = fixture_digest(BackendKind.EMBED, [ref_bytes], {})
    (world.fixtures / "embed" / f"{digest}.json").write_text(
        json.dumps({"vector": [1.0, None]})
    )
    manifest = world.root / "out" / "reports" / "manifest.json"
    assert main(_args(world, "reid", "out", "--manifest", str(manifest))) == 4


def test_score_command(tmp_path, capsys):
    world = build_world(tmp_path)
    predictions = [
        {
            "subject_id": subject["subject_id"],
            "source_image": "x.png",
            "provenance": "maxim",
            "answers": dict(
                zip(
                    [
                        "gender", "age", "ethnic_group", "hair_color",
                        "iris_color", "height", "weight",
                    ],
                    subject["answers"]["original"],
                )
            ),
        }
        for subject in SUBJECTS
    ]
    preds = tmp_path / "preds.json"
    preds.write_text(json.dumps(predictions))
    code = main(
        [
            "score",
            "--records", str(world.dataset),
            "--predictions", str(preds),
            "--out", str(tmp_path / "score_out"),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "MAXIM" in out
    assert (tmp_path / "score_out" / "reports" / "cohort.csv").exists()


def test_report_command_emits_gnuplot(tmp_path, capsys):
    world = build_world(tmp_path)
    assert main(_args(world, "pipeline")) == 0
    code = main(
        ["report", "--out", str(world.root / "out"), "--emit-gnuplot"]
    )
    assert code == 0
    script = world.root / "out" / "reports" / "reid" / "plot.gp"
    assert script.exists()
    text = script.read_text()
    assert "original_distance" in text
    assert "with image" in text


def test_reid_offline_from_embedding_files(tmp_path, capsys):
    from mugpipe.attributes import Provenance
    from mugpipe.reid import Embedding, write_embeddings_jsonl

    refs = [
        Embedding("a", "ra.png", [10.0, 0.0]),
        Embedding("b", "rb.png", [0.0, 10.0]),
    ]
    probes = [
        Embedding("a", "pa.png", [9.5, 0.5], Provenance.GENERATED),
        Embedding("b", "pb.png", [0.5, 9.5], Provenance.GENERATED),
    ]
    ref_path = tmp_path / "refs.jsonl"
    probe_path = tmp_path / "probes.jsonl"
    write_embeddings_jsonl(refs, ref_path)
    write_embeddings_jsonl(probes, probe_path)
    code = main(
        [
            "reid",
            "--ref-embeddings", str(ref_path),
            "--probe-embeddings", str(probe_path),
            "--out", str(tmp_path / "out"),
            "--threshold", "2.0",
        ]
    )
    assert code == 0
    assert "identification accuracy 1.000" in capsys.readouterr().out
    assert (tmp_path / "out" / "reports" / "reid" / "offline_distance.csv").exists()


def test_pipeline_emits_embedding_jsonl(tmp_path):
    world = build_world(tmp_path)
    assert main(_args(world, "pipeline")) == 0
    reid_dir = world.root / "out" / "reports" / "reid"
    assert (reid_dir / "reference_embeddings.jsonl").exists()
    assert (reid_dir / "original_probe_embeddings.jsonl").exists()


def test_sweep_flag_overrides_config(tmp_path):
    world = build_world(tmp_path)
    # config has sweep=true; the flag is the only way to force it on a
    # config that disabled it, so exercise the off->on path
    text = world.config.read_text().replace("sweep = true", "sweep = false")
    world.config.write_text(text)
    assert main(_args(world, "pipeline", "out", "--sweep")) == 0
    reid_dir = world.root / "out" / "reports" / "reid"
    assert list(reid_dir.glob("*_sweep.csv"))
