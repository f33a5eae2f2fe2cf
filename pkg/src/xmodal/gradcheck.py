"""Finite-difference verification of the analytic gradients.

The oracle is central differences in float64: perturb one coordinate,
rerun the full forward (with the dropout mask pinned by reseeding the
same stream), and difference the scalar probe loss L = sum(G * output)
for a fixed random direction G. Nothing here reuses the analytic
backward path.

Central differences are only valid at differentiable points, so a trial
is resampled whenever its forward pass lands within a safety margin of a
ReLU kink or of the norm-layer singularity (biases are randomized too;
zero-init biases plus a fully dropped row would otherwise pin a whole
block exactly onto the kink).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (
    M3LHyperparams,
    PATRHyperparams,
    TripletBatch,
    m3l_loss,
    patr_loss,
)
from .projection import ProjectionConfig, ProjectionParams, backward, forward, init_params

FD_STEP = 1e-5
REL_TOL = 1e-4
ZERO_FLOOR = 1e-7   # both-gradients-zero: nothing meaningful to compare
KINK_MARGIN = 1e-3  # min |pre-ReLU| at surviving coords for a usable trial
NORM_MARGIN = 0.05  # min nonzero row norm entering an l2 layer


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(
        float(np.abs(analytic).max(initial=0.0)),
        float(np.abs(numeric).max(initial=0.0)),
    )
    if scale < ZERO_FLOOR:
        return 0.0
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def central_difference(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Coordinate-wise central differences of scalar f at x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f()
        xf[i] = orig - step
        lo = f()
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def _random_config(rng: np.random.Generator) -> ProjectionConfig:
    n_blocks = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 17)) for _ in range(n_blocks)]
    rates = [float(rng.choice([0.0, 0.2, 0.5])) for _ in range(n_blocks)]
    flags = [bool(rng.integers(0, 2)) for _ in range(n_blocks)]
    return ProjectionConfig(
        input_dim=int(rng.integers(1, 17)),
        layer_dims=tuple(dims),
        dropout_rates=tuple(rates),
        l2norm_flags=tuple(flags),
        seed=int(rng.integers(0, 2**31)),
    )


def _at_differentiable_point(trace) -> bool:
    """True when every surviving pre-ReLU value and every nonzero row norm
    sits far enough from its kink that a +-FD_STEP straddle stays on one
    branch (dropped coordinates and fully dead rows are locally constant
    and therefore safe)."""
    for z, mask, h, r in zip(
        trace.pre_activations, trace.dropout_masks, trace.post_relu, trace.norms
    ):
        surviving = np.abs(z) if mask is None else np.abs(z)[mask > 0]
        if surviving.size and surviving.min() < KINK_MARGIN:
            return False
        if r is not None:
            norms = np.linalg.norm(h, axis=1)
            live = norms[norms > 0]
            if live.size and live.min() < NORM_MARGIN:
                return False
    return True


def check_projection_gradients(
    trial_seed: int,
    mode: str = "train",
) -> list[GradCheckResult]:
    """One trial: random small config and batch, analytic vs central FD
    for every weight, bias, and the input, in float64."""
    for attempt in range(1000):
        rng = np.random.default_rng(np.random.SeedSequence([trial_seed, attempt]))
        config = _random_config(rng)
        batch = int(rng.integers(1, 5))
        params = init_params(config).astype(np.float64)
        for b in params.biases:
            b += rng.uniform(-0.5, 0.5, size=b.shape)
        x = rng.standard_normal((batch, config.input_dim))
        mask_seed = int(rng.integers(0, 2**63))
        probe = rng.standard_normal((batch, config.output_dim))

        def run_forward():
            out, trace = forward(
                params, x, mode=mode, rng=np.random.default_rng(mask_seed)
            )
            return out, trace

        def loss_value() -> float:
            out, _ = run_forward()
            return float(np.sum(probe * out))

        out, trace = run_forward()
        if _at_differentiable_point(trace):
            break
    else:
        raise RuntimeError(f"no differentiable-point trial found for seed {trial_seed}")
    grads, input_grad = backward(params, trace, probe)

    results: list[GradCheckResult] = []
    for k in range(params.n_blocks):
        fd = central_difference(loss_value, params.weights[k])
        results.append(_result(f"trial{trial_seed}/W{k}", grads.weights[k], fd))
        fd = central_difference(loss_value, params.biases[k])
        results.append(_result(f"trial{trial_seed}/b{k}", grads.biases[k], fd))
    fd = central_difference(loss_value, x)
    results.append(_result(f"trial{trial_seed}/input", input_grad, fd))
    return results


def _result(name: str, analytic: np.ndarray, numeric: np.ndarray) -> GradCheckResult:
    err = relative_error(np.asarray(analytic, dtype=np.float64), numeric)
    return GradCheckResult(name=name, rel_error=err, passed=err <= REL_TOL)


def _random_batch(rng: np.random.Generator, n: int, d: int) -> TripletBatch:
    return TripletBatch(
        anchor_text=rng.standard_normal((n, d)),
        pos_image=rng.standard_normal((n, d)),
        neg_image=rng.standard_normal((n, d)),
        neg_text=rng.standard_normal((n, d)),
    )


def check_m3l_gradients(trial_seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(trial_seed)
    n, d = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    batch = _random_batch(rng, n, d)
    hp = M3LHyperparams(
        rho=float(rng.choice([1.0, 2.0, 4.0])),
        alpha1=float(rng.uniform(0.1, 1.0)),
        alpha2=float(rng.uniform(0.1, 1.0)),
    )
    out = m3l_loss(batch, hp)
    fd_anchor = central_difference(lambda: m3l_loss(batch, hp).loss, batch.anchor_text)
    fd_neg = central_difference(lambda: m3l_loss(batch, hp).loss, batch.neg_text)
    return [
        _result(f"m3l{trial_seed}/anchor", out.grad_anchor, fd_anchor),
        _result(f"m3l{trial_seed}/neg_text", out.grad_neg_text, fd_neg),
    ]


def check_patr_gradients(trial_seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(trial_seed)
    n, d = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    batch = _random_batch(rng, n, d)
    # keep every row's hinge argument well away from the kink so the FD
    # straddle stays on one branch
    dist = np.einsum("ij,ij->i", batch.anchor_text - batch.neg_image,
                     batch.anchor_text - batch.neg_image)
    offset = float(rng.uniform(0.5, 2.0)) * float(rng.choice([-1.0, 1.0]))
    hp = PATRHyperparams(eta=max(0.0, float(np.median(dist)) + offset))
    if np.any(np.abs(hp.eta - dist) < 1e-3):
        hp = PATRHyperparams(eta=hp.eta + 5e-3)
    out = patr_loss(batch, hp)
    fd_anchor = central_difference(lambda: patr_loss(batch, hp).loss, batch.anchor_text)
    return [_result(f"patr{trial_seed}/anchor", out.grad_anchor, fd_anchor)]


def run_suite(trials: int = 100, base_seed: int = 20240) -> list[GradCheckResult]:
    """The full gradient-check suite: projection stack plus both losses."""
    results: list[GradCheckResult] = []
    for i in range(trials):
        results.extend(check_projection_gradients(base_seed + i))
    for i in range(max(1, trials // 4)):
        results.extend(check_m3l_gradients(base_seed + 10_000 + i))
        results.extend(check_patr_gradients(base_seed + 20_000 + i))
    return results
