"""Training objectives over (anchor text, positive image, negative image,
negative text) quadruples.

Both losses use the squared Euclidean distance d(x, y) = sum((x-y)^2).

M3L (ratio form, mean over rows):

    alpha1 * d(a, im_p)^rho / d(a, im_n)^rho
  + alpha2 * d(a, im_p)^rho / d(a, te_n)^rho

PATR (hinge form, mean over rows):

    d(a, im_p) + max(0, eta - d(a, im_n))

Gradients flow to the anchor text and (for M3L) the negative text only;
the image side is frozen and never receives gradients. Internals run in
float64 regardless of input dtype: the ratio terms raise distances to
rho+1, which underflows float32 long before the 1e-12 denominator floor
kicks in. Outputs are cast back to the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

DENOM_EPS = 1e-12
# epsilon-floored ratios can produce float64 gradients far beyond the
# float32 range; magnitudes are clamped so that both the cast gradient
# and its square (Adam's second moment) stay finite in float32
GRAD_CLAMP = 1e18


@dataclass(frozen=True)
class M3LHyperparams:
    rho: float = 4.0
    alpha1: float = 0.5
    alpha2: float = 1.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")
        if self.alpha1 == 0 and self.alpha2 == 0:
            raise ValueError("alpha1 and alpha2 cannot both be zero")


@dataclass(frozen=True)
class PATRHyperparams:
    eta: float = 1100.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


@dataclass
class TripletBatch:
    """Row-aligned training quadruples in the image-embedding space."""

    anchor_text: np.ndarray
    pos_image: np.ndarray
    neg_image: np.ndarray
    neg_text: np.ndarray

    def __post_init__(self):
        shape = self.anchor_text.shape
        if len(shape) != 2:
            raise ShapeMismatch(f"batch matrices must be 2-d, got {shape}")
        for name in ("pos_image", "neg_image", "neg_text"):
            other = getattr(self, name).shape
            if other != shape:
                raise ShapeMismatch(f"{name} shape {other} != anchor shape {shape}")

    def __len__(self) -> int:
        return self.anchor_text.shape[0]


@dataclass
class LossOutput:
    loss: float
    grad_anchor: np.ndarray
    grad_neg_text: np.ndarray | None   # None for losses without a text term
    degenerate_denominators: int = 0


def square_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Squared Euclidean distance between two vectors."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatch(f"expected equal-length vectors, got {x.shape} and {y.shape}")
    d = x.astype(np.float64) - y.astype(np.float64)
    return float(np.dot(d, d))


def _row_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.einsum("ij,ij->i", d, d)


def m3l_loss(batch: TripletBatch, hp: M3LHyperparams) -> LossOutput:
    """Ratio loss value plus gradients w.r.t. anchor and negative text.

    Denominators are floored at max(d, eps); where the floor is active
    the gradient through that denominator is zero (the floored branch is
    constant) and the degenerate counter is incremented.
    """
    out_dtype = batch.anchor_text.dtype
    a = batch.anchor_text.astype(np.float64)
    p = batch.pos_image.astype(np.float64)
    im_n = batch.neg_image.astype(np.float64)
    te_n = batch.neg_text.astype(np.float64)
    n = a.shape[0]
    rho, a1, a2 = hp.rho, hp.alpha1, hp.alpha2

    P = _row_sqdist(a, p)
    N_raw = _row_sqdist(a, im_n)
    T_raw = _row_sqdist(a, te_n)
    n_floored = N_raw < DENOM_EPS
    t_floored = T_raw < DENOM_EPS
    N = np.maximum(N_raw, DENOM_EPS)
    T = np.maximum(T_raw, DENOM_EPS)

    P_rho = P ** rho
    loss_rows = a1 * P_rho / N ** rho + a2 * P_rho / T ** rho
    loss = float(loss_rows.mean()) if n else 0.0

    # d/dP of P^rho, with the 0^(rho-1) corner pinned to a finite subgradient
    if rho == 1.0:
        P_rho_m1 = np.ones_like(P)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            P_rho_m1 = np.where(P > 0.0, P ** (rho - 1.0), 0.0)

    coef_p = rho * P_rho_m1 * (a1 / N ** rho + a2 / T ** rho)
    coef_n = np.where(n_floored, 0.0, a1 * rho * P_rho / N ** (rho + 1.0))
    coef_t = np.where(t_floored, 0.0, a2 * rho * P_rho / T ** (rho + 1.0))

    scale = 1.0 / n if n else 0.0
    grad_a = scale * (
        coef_p[:, None] * 2.0 * (a - p)
        - coef_n[:, None] * 2.0 * (a - im_n)
        - coef_t[:, None] * 2.0 * (a - te_n)
    )
    grad_t = scale * (coef_t[:, None] * 2.0 * (a - te_n))
    return LossOutput(
        loss=loss,
        grad_anchor=np.clip(grad_a, -GRAD_CLAMP, GRAD_CLAMP).astype(out_dtype),
        grad_neg_text=np.clip(grad_t, -GRAD_CLAMP, GRAD_CLAMP).astype(out_dtype),
        degenerate_denominators=int(n_floored.sum() + t_floored.sum()),
    )


def patr_loss(batch: TripletBatch, hp: PATRHyperparams) -> LossOutput:
    """Hinge loss value plus gradient w.r.t. the anchor text.

    neg_text is ignored; the subgradient at the hinge kink is 0 (the
    inactive branch).
    """
    out_dtype = batch.anchor_text.dtype
    a = batch.anchor_text.astype(np.float64)
    p = batch.pos_image.astype(np.float64)
    im_n = batch.neg_image.astype(np.float64)
    n = a.shape[0]

    P = _row_sqdist(a, p)
    N = _row_sqdist(a, im_n)
    hinge = hp.eta - N
    active = hinge > 0.0
    loss_rows = P + np.where(active, hinge, 0.0)
    loss = float(loss_rows.mean()) if n else 0.0

    scale = 1.0 / n if n else 0.0
    grad_a = scale * (2.0 * (a - p) - active[:, None] * 2.0 * (a - im_n))
    return LossOutput(
        loss=loss,
        grad_anchor=np.clip(grad_a, -GRAD_CLAMP, GRAD_CLAMP).astype(out_dtype),
        grad_neg_text=None,
    )
