"""Shared test fixtures: a deterministic offline model-backend world.

`build_world` lays out a small dataset (subjects + reference images) and
a fixture-backend directory tree whose canned responses cover every call
the pipeline will make: describing originals and TV-denoised variants,
generating synthetic images for the configured arms, and embedding
references and probes. Embedding vectors are constructed so that probes
generated from originals sit near their subject's centroid while probes
of the original_plus_generated arm are pulled toward the next subject,
which degrades identification for that arm.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from mugpipe.attributes import SubjectRecord, load_subject_records
from mugpipe.gateway import BackendKind, fixture_digest
from mugpipe.imagefiles import load_image, save_image
from mugpipe.prompts import (
    AgeDirection,
    build_aging_prompt,
    build_generation_prompt,
    build_vlm_questions,
)
from mugpipe.tvdenoise import DenoiseParams, denoise_rgb

EMBED_DIM = 8
GEN_COUNT = 2
DENOISE = DenoiseParams(iterations=40)

SUBJECTS = [
    {
        "subject_id": "s01",
        "attributes": {
            "gender": "Male",
            "age": "35",
            "ethnic_group": "Caucasian",
            "hair_color": "black",
            "iris_color": "brown",
            "height": "5'10\"",
            "weight": "180 lbs",
        },
        "color": (200, 40, 40),
        "answers": {
            "original": ["male", "35", "Caucasian", "black", "brown", "178 cm", "81 kg"],
            "tv_denoise": ["male", "45", "Caucasian", "black", "not visible", "178 cm", "81 kg"],
        },
    },
    {
        "subject_id": "s02",
        "attributes": {
            "gender": "Female",
            "age": "27",
            "ethnic_group": "hispanic",
            "hair_color": "blonde",
            "iris_color": "green",
            "height": "165 cm",
            "weight": "60 kg",
        },
        "color": (40, 200, 40),
        "answers": {
            "original": ["female", "25-30", "White", "light brown", "blue", "1.65 m", "62 kg"],
            "tv_denoise": ["female", "27", "hispanic", "blonde", "green", "165", "60"],
        },
    },
    {
        "subject_id": "s03",
        "attributes": {
            "gender": "Male",
            "age": "52",
            "ethnic_group": "african",
            "hair_color": "gray",
            "iris_color": "brown",
            "height": "1.82 m",
            "weight": "90 kg",
        },
        "color": (40, 40, 200),
        "answers": {
            "original": ["male", "50", "African American", "grey", "brown", "182 cm", "88 kg"],
            "tv_denoise": ["male", "60", "unknown", "black", "brown", "180 cm", "95 kg"],
        },
    },
]


def make_png(color: tuple[int, int, int], stamp: int = 0, size: int = 8) -> bytes:
    """Deterministic PNG bytes, unique per (color, stamp)."""
    arr = np.zeros((size, size, 3), dtype=np.uint8)
    arr[:, :] = color
    arr[0, 0] = (stamp % 256, (stamp // 256) % 256, 255)
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def centroid(index: int) -> np.ndarray:
    vec = np.zeros(EMBED_DIM)
    vec[index % EMBED_DIM] = 10.0
    return vec


def unit(index: int) -> np.ndarray:
    vec = np.zeros(EMBED_DIM)
    vec[index % EMBED_DIM] = 1.0
    return vec


@dataclass
class World:
    root: Path
    dataset: Path
    config: Path
    fixtures: Path
    records: list[SubjectRecord]
    gen_bytes: dict  # subject -> arm -> list of generated image bytes


def _write_fixture(fixtures: Path, kind: BackendKind, digest: str, body: dict) -> None:
    (fixtures / kind.value / f"{digest}.json").write_text(
        json.dumps(body), encoding="utf-8"
    )


def _add_embed_fixture(fixtures: Path, image_bytes: bytes, vector: np.ndarray) -> None:
    digest = fixture_digest(BackendKind.EMBED, [image_bytes], {})
    _write_fixture(
        fixtures, BackendKind.EMBED, digest, {"vector": [float(x) for x in vector]}
    )


def _tv_denoised_bytes(ref_path: Path, tmp: Path) -> bytes:
    image = load_image(ref_path)
    out = denoise_rgb(image, DENOISE)
    scratch = tmp / f"tvd_{ref_path.stem}.png"
    save_image(out, scratch)
    return scratch.read_bytes()


CONFIG_TOML = """\
dataset = "data/subjects.json"
out_dir = "out"
enhancements = ["tv_denoise"]

[denoise]
iterations = {iterations}

[generation]
count = {count}
arms = [{arms}]

[reid]
threshold = 6.0
similarity_threshold = 0.9
sweep = true
"""


def build_world(
    tmp_path: Path,
    arms: tuple[str, ...] = ("original", "original_plus_generated"),
) -> World:
    root = tmp_path / "world"
    images = root / "data" / "images"
    images.mkdir(parents=True)
    fixtures = root / "fixtures"
    for kind in BackendKind:
        (fixtures / kind.value).mkdir(parents=True)
    scratch = root / "scratch"
    scratch.mkdir()

    dataset = root / "data" / "subjects.json"
    payload = []
    for subject in SUBJECTS:
        name = f"images/{subject['subject_id']}.png"
        (root / "data" / name).write_bytes(make_png(subject["color"]))
        payload.append(
            {
                "subject_id": subject["subject_id"],
                "attributes": subject["attributes"],
                "reference_images": [name],
            }
        )
    dataset.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    records = load_subject_records(dataset)

    config = root / "config.toml"
    config.write_text(
        CONFIG_TOML.format(
            iterations=DENOISE.iterations,
            count=GEN_COUNT,
            arms=", ".join(f'"{a}"' for a in arms),
        ),
        encoding="utf-8",
    )

    questions = build_vlm_questions()
    gen_bytes: dict = {}
    n = len(SUBJECTS)
    for index, (subject, record) in enumerate(zip(SUBJECTS, records)):
        sid = subject["subject_id"]
        ref_path = root / "data" / "images" / f"{sid}.png"
        ref_bytes = ref_path.read_bytes()

        # describe fixtures: original image and its TV-denoised variant
        digest = fixture_digest(
            BackendKind.DESCRIBE, [ref_bytes], {"questions": questions}
        )
        _write_fixture(
            fixtures, BackendKind.DESCRIBE, digest,
            {"answers": subject["answers"]["original"]},
        )
        tvd_bytes = _tv_denoised_bytes(ref_path, scratch)
        digest = fixture_digest(
            BackendKind.DESCRIBE, [tvd_bytes], {"questions": questions}
        )
        _write_fixture(
            fixtures, BackendKind.DESCRIBE, digest,
            {"answers": subject["answers"]["tv_denoise"]},
        )

        # reference embedding: the subject centroid
        _add_embed_fixture(fixtures, ref_bytes, centroid(index))

        # generation fixtures per arm
        prompt = build_generation_prompt(record)
        params = {
            "prompt": prompt.rendered_positive,
            "negative_prompt": prompt.rendered_negative,
            "sample_steps": 50,
            "style_strength": 20,
            "count": GEN_COUNT,
        }
        gen_bytes[sid] = {}

        original_outputs = [
            make_png(subject["color"], stamp=100 + k) for k in range(GEN_COUNT)
        ]
        gen_bytes[sid]["original"] = original_outputs
        digest = fixture_digest(BackendKind.GENERATE, [ref_bytes], params)
        _write_fixture(
            fixtures, BackendKind.GENERATE, digest,
            {"images_b64": [_b64(b) for b in original_outputs]},
        )
        for k, blob in enumerate(original_outputs):
            # near the subject centroid: correctly identified
            _add_embed_fixture(
                fixtures, blob, centroid(index) + 0.2 * unit(index + 1 + k)
            )

        if "original_plus_generated" in arms:
            mixed_inputs = [ref_bytes] + original_outputs
            mixed_outputs = [
                make_png(subject["color"], stamp=200 + k) for k in range(GEN_COUNT)
            ]
            gen_bytes[sid]["original_plus_generated"] = mixed_outputs
            digest = fixture_digest(BackendKind.GENERATE, mixed_inputs, params)
            _write_fixture(
                fixtures, BackendKind.GENERATE, digest,
                {"images_b64": [_b64(b) for b in mixed_outputs]},
            )
            drifted = 0.45 * centroid(index) + 0.55 * centroid((index + 1) % n)
            for k, blob in enumerate(mixed_outputs):
                # pulled toward the next subject: degraded identification
                _add_embed_fixture(
                    fixtures, blob, drifted + 0.05 * unit(index + 2 + k)
                )

        if "original_plus_enhanced" in arms:
            enhanced_inputs = [ref_bytes, tvd_bytes]
            enhanced_outputs = [
                make_png(subject["color"], stamp=400 + k) for k in range(GEN_COUNT)
            ]
            gen_bytes[sid]["original_plus_enhanced"] = enhanced_outputs
            digest = fixture_digest(BackendKind.GENERATE, enhanced_inputs, params)
            _write_fixture(
                fixtures, BackendKind.GENERATE, digest,
                {"images_b64": [_b64(b) for b in enhanced_outputs]},
            )
            for k, blob in enumerate(enhanced_outputs):
                _add_embed_fixture(
                    fixtures, blob, centroid(index) + 0.3 * unit(index + 3 + k)
                )

    return World(
        root=root,
        dataset=dataset,
        config=config,
        fixtures=fixtures,
        records=records,
        gen_bytes=gen_bytes,
    )


AGING_CONFIG_TOML = """\
dataset = "data/aging_subjects.json"
out_dir = "out"

[denoise]
iterations = {iterations}

[generation]
count = {count}

[reid]
threshold = 6.0
sweep = false
"""


def build_aging_world(
    tmp_path: Path, target_age: float = 70.0, direction: str = "age"
) -> World:
    root = tmp_path / "aging_world"
    images = root / "data" / "images"
    images.mkdir(parents=True)
    fixtures = root / "fixtures"
    for kind in BackendKind:
        (fixtures / kind.value).mkdir(parents=True)

    dataset = root / "data" / "aging_subjects.json"
    payload = []
    for subject in SUBJECTS[:2]:
        sid = subject["subject_id"]
        young = f"images/{sid}_young.png"
        old = f"images/{sid}_old.png"
        (root / "data" / young).write_bytes(make_png(subject["color"], stamp=1))
        (root / "data" / old).write_bytes(make_png(subject["color"], stamp=2))
        payload.append(
            {
                "subject_id": sid,
                "attributes": subject["attributes"],
                "reference_images": [young, old],
            }
        )
    dataset.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    records = load_subject_records(dataset)

    config = root / "config.toml"
    config.write_text(
        AGING_CONFIG_TOML.format(iterations=DENOISE.iterations, count=GEN_COUNT),
        encoding="utf-8",
    )

    gen_bytes: dict = {}
    for index, (subject, record) in enumerate(zip(SUBJECTS[:2], records)):
        sid = subject["subject_id"]
        young_bytes = (root / "data" / f"images/{sid}_young.png").read_bytes()
        old_bytes = (root / "data" / f"images/{sid}_old.png").read_bytes()

        prompt = build_aging_prompt(
            build_generation_prompt(record), target_age, AgeDirection(direction)
        )
        params = {
            "prompt": prompt.rendered_positive,
            "negative_prompt": prompt.rendered_negative,
            "sample_steps": 50,
            "style_strength": 20,
            "count": GEN_COUNT,
        }
        outputs = [
            make_png(subject["color"], stamp=300 + k) for k in range(GEN_COUNT)
        ]
        gen_bytes[sid] = {"aging": outputs}
        digest = fixture_digest(BackendKind.GENERATE, [young_bytes], params)
        _write_fixture(
            fixtures, BackendKind.GENERATE, digest,
            {"images_b64": [_b64(b) for b in outputs]},
        )
        _add_embed_fixture(fixtures, old_bytes, centroid(index))
        for k, blob in enumerate(outputs):
            _add_embed_fixture(
                fixtures, blob, centroid(index) + 0.2 * unit(index + 1 + k)
            )

    return World(
        root=root,
        dataset=dataset,
        config=config,
        fixtures=fixtures,
        records=records,
        gen_bytes=gen_bytes,
    )
