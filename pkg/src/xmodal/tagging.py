"""Zero-shot multi-lingual image tagging.

Every target-vocabulary tag gets a blended score per source tag:

    score(T) = w1 * cos(image, T) + w2 * cos(source_tag, T)

Source tags are processed in input order (the upstream tagger's
confidence order); each takes the highest-scoring target tag not already
assigned, so source and target annotations stay one-to-one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeMismatch, VocabExhausted
from .projection import ProjectionParams, forward
from .store import EmbeddingTable

NORM_EPS = 1e-12


@dataclass(frozen=True)
class TaggingWeights:
    w1: float = 0.65   # image-tag similarity weight
    w2: float = 0.35   # source-tag-tag similarity weight

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("weights must be non-negative")
        if self.w1 + self.w2 <= 0:
            raise ValueError("weights cannot both be zero")


@dataclass
class TagVocab:
    """Target-language tag strings with their projected embeddings."""

    tags: tuple[str, ...]
    embeddings: np.ndarray   # (|tags|, D), image-space

    def __post_init__(self):
        self.tags = tuple(self.tags)
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("vocabulary tags must be unique")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.tags):
            raise ShapeMismatch(
                f"{len(self.tags)} tags but embedding shape {self.embeddings.shape}"
            )

    def __len__(self) -> int:
        return len(self.tags)


class AssignedTag(NamedTuple):
    source_tag: str
    target_tag: str
    score: float
    rank_considered: int   # 1-based position in that source tag's ranking


@dataclass
class TagAssignment:
    pairs: list[AssignedTag]


def build_vocab(raw_vocab: EmbeddingTable, params: ProjectionParams) -> TagVocab:
    """Project raw tag-text embeddings once and cache them (the
    extraction phase); table ids are the tag strings."""
    projected, _ = forward(params, raw_vocab.vectors, mode="eval")
    return TagVocab(tags=raw_vocab.ids, embeddings=projected)


def _cosine_to_rows(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    qn = max(float(np.linalg.norm(query)), NORM_EPS)
    norms = np.maximum(np.linalg.norm(matrix, axis=1), NORM_EPS)
    return (matrix @ query) / (norms * qn)


def score_targets(
    image_emb: np.ndarray,
    source_tag_emb: np.ndarray,
    vocab: TagVocab,
    w: TaggingWeights = TaggingWeights(),
) -> np.ndarray:
    """Blended per-vocab-tag scores, aligned with vocab.tags."""
    image_emb = np.asarray(image_emb, dtype=np.float64)
    source_tag_emb = np.asarray(source_tag_emb, dtype=np.float64)
    d = vocab.embeddings.shape[1]
    if image_emb.shape != (d,) or source_tag_emb.shape != (d,):
        raise ShapeMismatch(
            f"expected {d}-vectors, got image {image_emb.shape} and "
            f"source {source_tag_emb.shape}"
        )
    if not (np.isfinite(image_emb).all() and np.isfinite(source_tag_emb).all()):
        raise ShapeMismatch("tag scoring inputs contain NaN or Inf")
    matrix = vocab.embeddings.astype(np.float64)
    return w.w1 * _cosine_to_rows(image_emb, matrix) + w.w2 * _cosine_to_rows(
        source_tag_emb, matrix
    )


def assign_tags(
    image_emb: np.ndarray,
    source_tags: Sequence[str],
    source_embs: np.ndarray,
    vocab: TagVocab,
    w: TaggingWeights = TaggingWeights(),
) -> TagAssignment:
    """One target tag per source tag, deduped.

    Per source tag the vocab is ranked by score (ties broken by tag
    string) and the best not-yet-assigned tag wins.
    """
    source_embs = np.asarray(source_embs)
    if source_embs.ndim != 2 or source_embs.shape[0] != len(source_tags):
        raise ShapeMismatch(
            f"{len(source_tags)} source tags but embedding shape {source_embs.shape}"
        )
    if len(source_tags) > len(vocab):
        raise VocabExhausted(
            f"{len(source_tags)} source tags exceed vocabulary size {len(vocab)}"
        )
    taken: set[str] = set()
    pairs: list[AssignedTag] = []
    tag_array = np.asarray(vocab.tags)
    for source_tag, source_emb in zip(source_tags, source_embs):
        scores = score_targets(image_emb, source_emb, vocab, w)
        order = np.lexsort((tag_array, -scores))
        for position, vocab_idx in enumerate(order, start=1):
            candidate = vocab.tags[vocab_idx]
            if candidate not in taken:
                taken.add(candidate)
                pairs.append(
                    AssignedTag(source_tag, candidate, float(scores[vocab_idx]), position)
                )
                break
    return TagAssignment(pairs=pairs)
