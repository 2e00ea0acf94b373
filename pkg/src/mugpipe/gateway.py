"""Uniform client for the external deep models (enhance / describe /
generate / embed).

Every backend speaks the same JSON-over-HTTP contract, and each kind can
instead be served from a fixture directory holding canned responses
keyed by a content digest of the request, which makes full pipeline runs
deterministic and offline-testable. TV denoising never goes over the
wire: it is routed to the native implementation.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .attributes import (
    CATEGORY_ORDER,
    AttributeDescription,
    Provenance,
    SynonymTable,
    description_from_answers,
)
from .errors import ConfigError, GatewayError, ProtocolError, UsageError, ValidationError
from .imagefiles import load_image, save_image, sniff_extension
from .prompts import PromptSpec
from .reid import Embedding
from .tvdenoise import DenoiseParams, GrayImage, denoise, denoise_rgb

DEFAULT_MAX_IMAGE_BYTES = 8 * 1024 * 1024
DEFAULT_MAX_INFLIGHT = 4


class BackendKind(str, Enum):
    ENHANCE = "enhance"
    DESCRIBE = "describe"
    GENERATE = "generate"
    EMBED = "embed"


class EnhanceMethod(str, Enum):
    MAXIM = "maxim"
    SRGAN = "srgan"
    TV_DENOISE = "tv_denoise"

    @property
    def provenance(self) -> Provenance:
        return Provenance(self.value)


@dataclass(frozen=True)
class BackendEndpoint:
    """Where one backend kind lives: a URL or a fixture directory."""

    kind: BackendKind
    url: str | None = None
    fixture_dir: Path | None = None
    timeout: float = 30.0
    max_retries: int = 2
    token: str | None = None

    def __post_init__(self) -> None:
        if (self.url is None) == (self.fixture_dir is None):
            raise ConfigError(
                f"{self.kind.value}: exactly one of url / fixture_dir must be set"
            )
        if self.timeout <= 0:
            raise ConfigError(f"{self.kind.value}: timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError(f"{self.kind.value}: max_retries must be >= 0")


@dataclass(frozen=True)
class GenerationRequest:
    """One call to the identity-preserving generator."""

    input_images: tuple[str, ...]
    prompt: PromptSpec
    sample_steps: int = 50
    style_strength_percent: int = 20
    count: int = 4

    def __post_init__(self) -> None:
        if not self.input_images:
            raise UsageError("generation needs at least one input image")
        if self.sample_steps < 1:
            raise UsageError("sample_steps must be >= 1")
        if not 0 <= self.style_strength_percent <= 100:
            raise UsageError("style_strength_percent must be in [0, 100]")
        if self.count < 1:
            raise UsageError("count must be >= 1")

    def params(self) -> dict:
        return {
            "prompt": self.prompt.rendered_positive,
            "negative_prompt": self.prompt.rendered_negative,
            "sample_steps": self.sample_steps,
            "style_strength": self.style_strength_percent,
            "count": self.count,
        }


def fixture_digest(
    kind: BackendKind, images: Sequence[bytes], params: Mapping
) -> str:
    """Content digest keying fixture responses: SHA-256 over the input
    image bytes plus the canonicalized request parameters."""
    payload = {
        "kind": kind.value,
        "images_sha256": [hashlib.sha256(b).hexdigest() for b in images],
        "params": params,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RunJournal:
    """Append-only JSONL log of every gateway call; writes are serialized."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(
            {"ts": datetime.now(timezone.utc).isoformat(), **record}, sort_keys=True
        )
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [
            json.loads(line)
            for line in self.path.read_text("utf-8").splitlines()
            if line.strip()
        ]


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"invalid base64 image payload: {exc}")


class ModelGateway:
    """Routes enhance/describe/generate/embed calls to their backends."""

    def __init__(
        self,
        endpoints: Mapping[BackendKind, BackendEndpoint],
        out_dir: str | Path,
        journal: RunJournal | None = None,
        denoise_params: DenoiseParams | None = None,
        synonyms: SynonymTable | None = None,
        max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
    ):
        self.endpoints = dict(endpoints)
        self.out_dir = Path(out_dir)
        self.journal = journal or RunJournal(self.out_dir / "journal.jsonl")
        self.denoise_params = denoise_params or DenoiseParams()
        self.synonyms = synonyms
        self.max_image_bytes = max_image_bytes
        self._semaphores = {
            kind: threading.Semaphore(max_inflight) for kind in BackendKind
        }
        self._embed_dim: int | None = None
        self._session = requests.Session()

    # -- plumbing ---------------------------------------------------------

    def _endpoint(self, kind: BackendKind) -> BackendEndpoint:
        endpoint = self.endpoints.get(kind)
        if endpoint is None:
            raise ConfigError(f"no endpoint configured for {kind.value}")
        return endpoint

    def _read_image(self, path: str | Path) -> bytes:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ValidationError(f"cannot read image {path}: {exc}")
        if len(data) > self.max_image_bytes:
            raise ValidationError(
                f"{path}: image exceeds the {self.max_image_bytes} byte transfer cap"
            )
        return data

    def _call(
        self, kind: BackendKind, digest: str, payload: dict
    ) -> tuple[dict, int]:
        """Dispatch to the fixture or HTTP backend; returns (response, attempts)."""
        endpoint = self._endpoint(kind)
        if endpoint.fixture_dir is not None:
            fixture = Path(endpoint.fixture_dir) / f"{digest}.json"
            if not fixture.exists():
                raise GatewayError(f"{kind.value}: no fixture response at {fixture}")
            try:
                return json.loads(fixture.read_text("utf-8")), 1
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"{fixture}: malformed fixture JSON: {exc}")
        return self._call_http(endpoint, payload)

    def _call_http(
        self, endpoint: BackendEndpoint, payload: dict
    ) -> tuple[dict, int]:
        headers = {}
        if endpoint.token:
            headers["Authorization"] = f"Bearer {endpoint.token}"
        attempts = 0
        last_error: str = "no attempt made"
        with self._semaphores[endpoint.kind]:
            while attempts <= endpoint.max_retries:
                attempts += 1
                try:
                    response = self._session.post(
                        endpoint.url,
                        json=payload,
                        timeout=endpoint.timeout,
                        headers=headers,
                    )
                except requests.RequestException as exc:
                    last_error = str(exc)
                    continue
                if response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                    continue
                if response.status_code != 200:
                    raise GatewayError(
                        f"{endpoint.kind.value} backend refused the request: "
                        f"HTTP {response.status_code}"
                    )
                try:
                    body = response.json()
                except ValueError:
                    raise ProtocolError(
                        f"{endpoint.kind.value} backend returned non-JSON body"
                    )
                if not isinstance(body, dict):
                    raise ProtocolError(
                        f"{endpoint.kind.value} backend returned a non-object body"
                    )
                return body, attempts
        raise GatewayError(
            f"{endpoint.kind.value} backend unreachable after {attempts} attempts: "
            f"{last_error}"
        )

    def _journal(self, **record) -> None:
        self.journal.append(record)

    def _decode_image(self, kind: BackendKind, text) -> bytes:
        if not isinstance(text, str):
            raise ProtocolError(f"{kind.value}: image payload must be base64 text")
        data = _unb64(text)
        if len(data) > self.max_image_bytes:
            raise ProtocolError(
                f"{kind.value}: returned image exceeds the transfer cap"
            )
        return data

    # -- operations -------------------------------------------------------

    def enhance(self, image_path: str | Path, method: EnhanceMethod) -> Path:
        """Enhance one image; TV denoising runs natively, the rest remote."""
        data = self._read_image(image_path)
        if method is EnhanceMethod.TV_DENOISE:
            return self._enhance_native(image_path, data)

        params = {"method": method.value}
        digest = fixture_digest(BackendKind.ENHANCE, [data], params)
        try:
            body, attempts = self._call(
                BackendKind.ENHANCE, digest, {"image_b64": _b64(data), **params}
            )
            if "image_b64" not in body:
                raise ProtocolError("enhance response missing image_b64")
            out_bytes = self._decode_image(BackendKind.ENHANCE, body["image_b64"])
        except (GatewayError, ProtocolError) as exc:
            self._journal(
                kind="enhance", status="error", inputs=[digest],
                params=params, error=str(exc),
            )
            raise
        out_dir = self.out_dir / "enhanced"
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / f"{digest[:16]}_{method.value}{sniff_extension(out_bytes)}"
        out_path.write_bytes(out_bytes)
        self._journal(
            kind="enhance", status="ok", inputs=[digest], params=params,
            outputs=[hashlib.sha256(out_bytes).hexdigest()], attempts=attempts,
        )
        return out_path

    def _enhance_native(self, image_path: str | Path, data: bytes) -> Path:
        dp = self.denoise_params
        params = {
            "method": EnhanceMethod.TV_DENOISE.value,
            "iterations": dp.iterations,
            "tv_weight": dp.tv_weight,
            "epsilon": dp.epsilon,
            "step": dp.step,
        }
        digest = fixture_digest(BackendKind.ENHANCE, [data], params)
        image = load_image(image_path)
        if isinstance(image, GrayImage):
            result = denoise(image, dp)
            suffix = ".pgm"
        else:
            result = denoise_rgb(image, dp)
            suffix = ".png"
        out_dir = self.out_dir / "enhanced"
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / f"{digest[:16]}_tv_denoise{suffix}"
        save_image(result, out_path)
        self._journal(
            kind="enhance", status="ok", inputs=[digest], params=params,
            outputs=[hashlib.sha256(out_path.read_bytes()).hexdigest()],
            attempts=1, backend="native",
        )
        return out_path

    def describe(
        self,
        image_path: str | Path,
        questions: Sequence[str],
        subject_id: str,
        provenance: Provenance,
        source_label: str | None = None,
    ) -> AttributeDescription:
        """Ask the describer the seven category questions about one image.

        ``source_label`` overrides the recorded source path (callers use
        it to keep report paths relative and rerun-stable)."""
        if len(questions) != 7:
            raise UsageError(f"expected 7 questions, got {len(questions)}")
        data = self._read_image(image_path)
        params = {"questions": list(questions)}
        digest = fixture_digest(BackendKind.DESCRIBE, [data], params)
        try:
            body, attempts = self._call(
                BackendKind.DESCRIBE, digest,
                {"image_b64": _b64(data), "questions": list(questions)},
            )
            answers = body.get("answers")
            if not isinstance(answers, list) or len(answers) != len(questions):
                got = len(answers) if isinstance(answers, list) else "none"
                raise ProtocolError(
                    f"describe: expected {len(questions)} answers, got {got}"
                )
            for answer in answers:
                if answer is not None and not isinstance(answer, str):
                    raise ProtocolError("describe: answers must be text or null")
        except (GatewayError, ProtocolError) as exc:
            self._journal(
                kind="describe", status="error", inputs=[digest],
                params=params, error=str(exc),
            )
            raise
        mapping = dict(zip(CATEGORY_ORDER, answers))
        description = description_from_answers(
            subject_id=subject_id,
            source_image=source_label if source_label is not None else str(image_path),
            provenance=provenance,
            answers=mapping,
            synonyms=self.synonyms,
        )
        self._journal(
            kind="describe", status="ok", inputs=[digest], params=params,
            outputs=[answers], attempts=attempts,
        )
        return description

    def generate(self, request: GenerationRequest) -> list[Path]:
        """Generate ``request.count`` synthetic images."""
        blobs = [self._read_image(p) for p in request.input_images]
        params = request.params()
        digest = fixture_digest(BackendKind.GENERATE, blobs, params)
        payload = {"images_b64": [_b64(b) for b in blobs], **params}
        try:
            body, attempts = self._call(BackendKind.GENERATE, digest, payload)
            images = body.get("images_b64")
            if not isinstance(images, list) or len(images) != request.count:
                got = len(images) if isinstance(images, list) else "none"
                raise ProtocolError(
                    f"generate: requested {request.count} images, got {got}"
                )
            decoded = [
                self._decode_image(BackendKind.GENERATE, item) for item in images
            ]
        except (GatewayError, ProtocolError) as exc:
            self._journal(
                kind="generate", status="error", inputs=[digest],
                params=params, error=str(exc),
            )
            raise
        out_dir = self.out_dir / "generated"
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for index, blob in enumerate(decoded):
            path = out_dir / f"{digest[:16]}_{index}{sniff_extension(blob)}"
            path.write_bytes(blob)
            paths.append(path)
        sidecar = {
            "input_images": [Path(p).name for p in request.input_images],
            "images_sha256": [hashlib.sha256(b).hexdigest() for b in blobs],
            **params,
        }
        (out_dir / f"{digest[:16]}.request.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self._journal(
            kind="generate", status="ok", inputs=[digest], params=params,
            outputs=[hashlib.sha256(b).hexdigest() for b in decoded],
            attempts=attempts,
        )
        return paths

    def embed(
        self,
        image_path: str | Path,
        subject_id: str,
        provenance: Provenance = Provenance.ORIGINAL,
        image_label: str | None = None,
    ) -> Embedding:
        """Compute the face embedding of one image."""
        data = self._read_image(image_path)
        digest = fixture_digest(BackendKind.EMBED, [data], {})
        try:
            body, attempts = self._call(
                BackendKind.EMBED, digest, {"image_b64": _b64(data)}
            )
            vector = body.get("vector")
            if not isinstance(vector, list) or not vector:
                raise ProtocolError("embed: response missing a non-empty vector")
            try:
                values = [float(x) for x in vector]
            except (TypeError, ValueError):
                raise ProtocolError("embed: vector must contain numbers")
            if not all(math.isfinite(x) for x in values):
                raise ProtocolError("embed: vector contains a non-finite value")
            if self._embed_dim is None:
                self._embed_dim = len(values)
            elif len(values) != self._embed_dim:
                raise ProtocolError(
                    f"embed: dimension changed within the run "
                    f"({len(values)} != {self._embed_dim})"
                )
        except (GatewayError, ProtocolError) as exc:
            self._journal(
                kind="embed", status="error", inputs=[digest], params={},
                error=str(exc),
            )
            raise
        self._journal(
            kind="embed", status="ok", inputs=[digest], params={},
            outputs=[len(values)], attempts=attempts,
        )
        return Embedding(
            subject_id=subject_id,
            image=image_label if image_label is not None else str(image_path),
            vector=values,
            provenance=provenance,
        )
