"""Image retrieval: exhaustive similarity ranking plus Recall@K.

The index is a plain matrix with cached norms; search is exact (at the
1K-100K scale this is both the right tool and its own oracle). Scores
are computed in float64. Ordering is by descending score with ties
broken by ascending image id, so results are platform-stable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MissingGroundTruth, ModalityMismatch, ShapeMismatch
from .projection import ProjectionParams, forward
from .store import EmbeddingTable, PairedDataset

NORM_EPS = 1e-12

METRICS = ("cosine", "square_distance")


@dataclass
class RetrievalIndex:
    """Immutable exhaustive-search index over image embeddings."""

    ids: tuple[str, ...]
    vectors: np.ndarray          # (n, D) float64
    norms: np.ndarray            # (n,) cached Euclidean norms

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class RankedList:
    entries: list[tuple[str, float]]   # (image_id, score), best first
    metric: str

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]


def build_index(images: EmbeddingTable) -> RetrievalIndex:
    if images.modality != "image":
        raise ModalityMismatch(f"index needs an image table, got {images.modality!r}")
    if len(images) == 0:
        warnings.warn("building an index over an empty table", stacklevel=2)
    vectors = images.vectors.astype(np.float64)
    vectors.flags.writeable = False
    norms = np.linalg.norm(vectors, axis=1)
    norms.flags.writeable = False
    return RetrievalIndex(ids=images.ids, vectors=vectors, norms=norms)


def _scores(query: np.ndarray, index: RetrievalIndex, metric: str) -> np.ndarray:
    if metric == "cosine":
        dots = index.vectors @ query
        qn = max(float(np.linalg.norm(query)), NORM_EPS)
        return dots / (np.maximum(index.norms, NORM_EPS) * qn)
    if metric == "square_distance":
        diff = index.vectors - query
        return -np.einsum("ij,ij->i", diff, diff)
    raise ValueError(f"unknown metric {metric!r}")


def rank(
    query: np.ndarray,
    index: RetrievalIndex,
    metric: str = "cosine",
    top_k: int | None = None,
    threshold: float | None = None,
) -> RankedList:
    """Full descending ordering of the index by similarity to the query.

    Entries scoring below the threshold are dropped after ranking; the
    list is then truncated to top_k if given.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or (len(index) and query.shape[0] != index.vectors.shape[1]):
        raise ShapeMismatch(
            f"query shape {query.shape} incompatible with index width "
            f"{index.vectors.shape[1] if len(index) else '(empty)'}"
        )
    if not np.isfinite(query).all():
        raise ShapeMismatch("query contains NaN or Inf")
    if len(index) == 0:
        return RankedList(entries=[], metric=metric)
    scores = _scores(query, index, metric)
    order = np.lexsort((np.asarray(index.ids), -scores))
    entries = [(index.ids[i], float(scores[i])) for i in order]
    if threshold is not None:
        entries = [e for e in entries if e[1] >= threshold]
    if top_k is not None:
        entries = entries[:top_k]
    return RankedList(entries=entries, metric=metric)


def recall_at_k(
    rankings: Sequence[RankedList],
    ground_truth: Sequence[str],
    k: int,
) -> float:
    """Fraction of queries whose ground-truth id sits in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rankings) != len(ground_truth):
        raise ShapeMismatch(
            f"{len(rankings)} rankings but {len(ground_truth)} ground-truth ids"
        )
    if not rankings:
        return 0.0
    hits = 0
    for ranking, gt in zip(rankings, ground_truth):
        ids = ranking.ids()
        if gt not in ids:
            raise MissingGroundTruth(f"ground-truth id {gt!r} absent from ranking")
        if gt in ids[:k]:
            hits += 1
    return hits / len(rankings)


@dataclass
class RecallRow:
    language: str
    k: int
    recall: float
    n_queries: int


def evaluate(
    params: ProjectionParams,
    dataset: PairedDataset,
    images: EmbeddingTable,
    k: int = 10,
    metric: str = "cosine",
) -> list[RecallRow]:
    """Project every caption (eval mode), rank against the full image
    index, and report Recall@k per language code."""
    index = build_index(images)
    projected, _ = forward(params, dataset.text_vectors, mode="eval")
    rows: list[RecallRow] = []
    for language in sorted(set(dataset.languages)):
        sel = [i for i, lang in enumerate(dataset.languages) if lang == language]
        rankings = [rank(projected[i], index, metric=metric) for i in sel]
        truth = [dataset.image_ids[i] for i in sel]
        rows.append(
            RecallRow(
                language=language,
                k=k,
                recall=recall_at_k(rankings, truth, k),
                n_queries=len(sel),
            )
        )
    return rows


def report_tsv(rows: Sequence[RecallRow], metric: str) -> str:
    lines = [f"# metric={metric}", "language\tk\trecall\tn_queries"]
    for row in rows:
        lines.append(f"{row.language}\t{row.k}\t{row.recall:.6f}\t{row.n_queries}")
    return "\n".join(lines) + "\n"
