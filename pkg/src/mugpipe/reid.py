"""Re-identification evaluation over face embeddings.

Builds reference/probe confusion matrices in distance (Euclidean) or
similarity (cosine) semantics, then derives identification accuracy and
threshold-based verification metrics from them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .attributes import Provenance
from .errors import EvaluationError, UsageError


class Semantics(str, Enum):
    DISTANCE = "distance"
    SIMILARITY = "similarity"


class Aggregation(str, Enum):
    MEAN = "mean"
    MIN = "min"
    MAX = "max"


@dataclass(frozen=True, eq=False)
class Embedding:
    """One face embedding with its origin metadata."""

    subject_id: str
    image: str
    vector: np.ndarray
    provenance: Provenance = Provenance.ORIGINAL

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise UsageError(
                f"embedding for {self.subject_id}: expected a 1-D vector"
            )
        if not np.all(np.isfinite(vec)):
            raise UsageError(
                f"embedding for {self.subject_id} ({self.image}): non-finite value"
            )
        object.__setattr__(self, "vector", vec)


def euclidean_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Plain L2 distance between two equal-dimension vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise UsageError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [0, 1] for reporting."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise UsageError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise UsageError("cosine similarity undefined for a zero vector")
    value = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(0.0, value))


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Inter-subject score grid between reference and probe image sets."""

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    cells: np.ndarray
    semantics: Semantics
    aggregation: Aggregation = Aggregation.MEAN

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.shape != (len(self.row_ids), len(self.col_ids)):
            raise UsageError(
                f"cells shape {cells.shape} does not match "
                f"{len(self.row_ids)}x{len(self.col_ids)} ids"
            )
        if not np.all(np.isfinite(cells)):
            raise UsageError("confusion matrix contains non-finite cells")
        if self.semantics is Semantics.DISTANCE and np.any(cells < 0):
            raise UsageError("distance cells must be >= 0")
        if self.semantics is Semantics.SIMILARITY and (
            np.any(cells < 0) or np.any(cells > 1)
        ):
            raise UsageError("similarity cells must lie in [0, 1]")
        object.__setattr__(self, "cells", cells)

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids


GroupedEmbeddings = Union[Sequence[Embedding], Mapping[str, Sequence[Embedding]]]


def _group(embeddings: GroupedEmbeddings, side: str) -> dict[str, list[Embedding]]:
    if isinstance(embeddings, Mapping):
        groups = {sid: list(embs) for sid, embs in embeddings.items()}
    else:
        groups = {}
        for emb in embeddings:
            groups.setdefault(emb.subject_id, []).append(emb)
    if not groups:
        raise EvaluationError(f"no {side} embeddings given")
    for sid, embs in groups.items():
        if not embs:
            raise EvaluationError(f"{side} group for subject {sid!r} is empty")
    return groups


def _check_uniform_dimension(*group_sets: Mapping[str, Sequence[Embedding]]) -> int:
    dim = None
    for groups in group_sets:
        for embs in groups.values():
            for emb in embs:
                if dim is None:
                    dim = emb.vector.size
                elif emb.vector.size != dim:
                    raise EvaluationError(
                        f"embedding dimension mismatch for {emb.subject_id} "
                        f"({emb.image}): {emb.vector.size} != {dim}"
                    )
    return int(dim)


def build_confusion_matrix(
    refs: GroupedEmbeddings,
    probes: GroupedEmbeddings,
    semantics: Semantics,
    aggregation: Aggregation = Aggregation.MEAN,
) -> ConfusionMatrix:
    """Aggregate pairwise scores over all ref x probe image pairs.

    Cell (i, j) aggregates the pairwise score between every reference
    image of row subject i and every probe image of column subject j.
    Rows and columns are sorted by subject id.
    """
    ref_groups = _group(refs, "reference")
    probe_groups = _group(probes, "probe")
    _check_uniform_dimension(ref_groups, probe_groups)

    score = euclidean_distance if semantics is Semantics.DISTANCE else cosine_similarity
    reduce = {
        Aggregation.MEAN: np.mean,
        Aggregation.MIN: np.min,
        Aggregation.MAX: np.max,
    }[aggregation]

    row_ids = tuple(sorted(ref_groups))
    col_ids = tuple(sorted(probe_groups))
    cells = np.zeros((len(row_ids), len(col_ids)))
    for i, rid in enumerate(row_ids):
        for j, cid in enumerate(col_ids):
            pair_scores = [
                score(r.vector, p.vector)
                for r in ref_groups[rid]
                for p in probe_groups[cid]
            ]
            cells[i, j] = float(reduce(pair_scores))
    return ConfusionMatrix(
        row_ids=row_ids,
        col_ids=col_ids,
        cells=cells,
        semantics=semantics,
        aggregation=aggregation,
    )


def identification_accuracy(matrix: ConfusionMatrix) -> float:
    """Fraction of rows whose single best cell is the diagonal one.

    Best means argmin for distances, argmax for similarities; a tie for
    best counts as a failed identification.
    """
    if not matrix.is_square:
        raise UsageError("identification requires a square matrix with equal ids")
    hits = 0
    for i in range(len(matrix.row_ids)):
        row = matrix.cells[i]
        best = row.min() if matrix.semantics is Semantics.DISTANCE else row.max()
        winners = np.flatnonzero(row == best)
        if winners.size == 1 and winners[0] == i:
            hits += 1
    return hits / len(matrix.row_ids)


def mean_genuine_score(matrix: ConfusionMatrix) -> float:
    """Mean diagonal cell: the average same-subject score."""
    if not matrix.is_square:
        raise UsageError("genuine scores require a square matrix with equal ids")
    return float(np.mean(np.diagonal(matrix.cells)))


@dataclass(frozen=True)
class VerificationMetrics:
    """Pairwise match/non-match outcome counts at one threshold."""

    threshold: float
    true_positive: int
    false_positive: int
    true_negative: int
    false_negative: int

    @property
    def total(self) -> int:
        return (
            self.true_positive
            + self.false_positive
            + self.true_negative
            + self.false_negative
        )

    @property
    def accuracy(self) -> float:
        return (self.true_positive + self.true_negative) / self.total

    @property
    def false_positive_rate(self) -> float:
        denom = self.false_positive + self.true_negative
        return self.false_positive / denom if denom else 0.0

    @property
    def false_negative_rate(self) -> float:
        denom = self.false_negative + self.true_positive
        return self.false_negative / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.true_positive,
            "fp": self.false_positive,
            "tn": self.true_negative,
            "fn": self.false_negative,
            "accuracy": self.accuracy,
            "false_positive_rate": self.false_positive_rate,
            "false_negative_rate": self.false_negative_rate,
        }


def verification_metrics(
    matrix: ConfusionMatrix, threshold: float
) -> VerificationMetrics:
    """Score every cell as a match decision against the threshold.

    Diagonal cells are genuine pairs, off-diagonal cells impostor pairs;
    a distance cell matches when <= threshold, a similarity cell when
    >= threshold.
    """
    if not matrix.is_square:
        raise UsageError("verification requires a square matrix with equal ids")
    if matrix.semantics is Semantics.DISTANCE:
        matches = matrix.cells <= threshold
    else:
        matches = matrix.cells >= threshold
    genuine = np.eye(len(matrix.row_ids), dtype=bool)
    tp = int(np.sum(matches & genuine))
    fn = int(np.sum(~matches & genuine))
    fp = int(np.sum(matches & ~genuine))
    tn = int(np.sum(~matches & ~genuine))
    return VerificationMetrics(
        threshold=float(threshold),
        true_positive=tp,
        false_positive=fp,
        true_negative=tn,
        false_negative=fn,
    )


def threshold_sweep(
    matrix: ConfusionMatrix, count: int = 50
) -> list[VerificationMetrics]:
    """Verification metrics at ``count`` evenly spaced thresholds.

    Distances sweep [0, max cell]; similarities sweep [0, 1].
    """
    if count < 2:
        raise UsageError("sweep needs at least 2 thresholds")
    if matrix.semantics is Semantics.DISTANCE:
        upper = float(matrix.cells.max())
    else:
        upper = 1.0
    thresholds = np.linspace(0.0, upper, count)
    return [verification_metrics(matrix, float(t)) for t in thresholds]


def load_embeddings_jsonl(path: str | Path) -> list[Embedding]:
    """Read embeddings from a JSONL file, one object per line."""
    embeddings: list[Embedding] = []
    dim = None
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluationError(f"{path}:{lineno}: invalid JSON: {exc}")
        try:
            emb = Embedding(
                subject_id=obj["subject_id"],
                image=obj["image"],
                vector=np.asarray(obj["vector"], dtype=np.float64),
                provenance=Provenance(obj.get("provenance", "original")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EvaluationError(f"{path}:{lineno}: bad embedding record: {exc}")
        if dim is None:
            dim = emb.vector.size
        elif emb.vector.size != dim:
            raise EvaluationError(
                f"{path}:{lineno}: dimension {emb.vector.size} != {dim}"
            )
        embeddings.append(emb)
    return embeddings


def write_embeddings_jsonl(
    embeddings: Sequence[Embedding], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for emb in embeddings:
            fh.write(
                json.dumps(
                    {
                        "subject_id": emb.subject_id,
                        "image": emb.image,
                        "provenance": emb.provenance.value,
                        "vector": [float(x) for x in emb.vector],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def write_matrix_csv(matrix: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id"] + list(matrix.col_ids))
        for rid, row in zip(matrix.row_ids, matrix.cells):
            writer.writerow([rid] + [f"{v:.9f}" for v in row])


def write_matrix_json(matrix: ConfusionMatrix, path: str | Path) -> None:
    payload = {
        "row_ids": list(matrix.row_ids),
        "col_ids": list(matrix.col_ids),
        "semantics": matrix.semantics.value,
        "aggregation": matrix.aggregation.value,
        "cells": [[float(v) for v in row] for row in matrix.cells],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_matrix_json(path: str | Path) -> ConfusionMatrix:
    obj = json.loads(Path(path).read_text("utf-8"))
    return ConfusionMatrix(
        row_ids=tuple(obj["row_ids"]),
        col_ids=tuple(obj["col_ids"]),
        cells=np.asarray(obj["cells"], dtype=np.float64),
        semantics=Semantics(obj["semantics"]),
        aggregation=Aggregation(obj["aggregation"]),
    )


def write_sweep_csv(
    metrics: Sequence[VerificationMetrics], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["threshold", "accuracy", "fpr", "fnr", "tp", "fp", "tn", "fn"]
        )
        for m in metrics:
            writer.writerow(
                [
                    f"{m.threshold:.9f}",
                    f"{m.accuracy:.9f}",
                    f"{m.false_positive_rate:.9f}",
                    f"{m.false_negative_rate:.9f}",
                    m.true_positive,
                    m.false_positive,
                    m.true_negative,
                    m.false_negative,
                ]
            )
