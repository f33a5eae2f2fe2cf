"""In-batch hard-negative selection.

For each (anchor text, positive image) row, the hard negative is the
image at another index whose squared distance to the projected anchor is
smallest; its paired caption becomes the hard negative text. Selection
is an index decision made on current forward-pass values and is never
differentiated through.
"""

from __future__ import annotations

import numpy as np

from .errors import BatchTooSmall, ShapeMismatch


def mine_hard_negatives(projected_texts: np.ndarray, images: np.ndarray) -> np.ndarray:
    """Return neg_index with neg_index[i] = argmin_{j != i} d(text_i, image_j).

    Ties break toward the smaller j. Exclusion is by index, not value:
    a duplicate of the positive image at another index is eligible.
    """
    texts = np.asarray(projected_texts)
    imgs = np.asarray(images)
    if texts.shape != imgs.shape or texts.ndim != 2:
        raise ShapeMismatch(
            f"texts {texts.shape} and images {imgs.shape} must be equal-shape 2-d"
        )
    n = texts.shape[0]
    if n < 2:
        raise BatchTooSmall(f"need at least 2 rows to mine negatives, got {n}")
    neg = np.empty(n, dtype=np.int64)
    for i in range(n):
        diff = imgs - texts[i]
        dist = np.einsum("ij,ij->i", diff, diff)
        dist[i] = np.inf
        neg[i] = np.argmin(dist)   # argmin returns the first (smallest) index on ties
    return neg
