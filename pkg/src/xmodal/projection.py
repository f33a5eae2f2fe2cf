"""Text-side projection network.

Stacked blocks of fully-connected layer -> inverted dropout -> ReLU ->
row-wise l2 normalization (the last block keeps ReLU but skips the norm
so outputs live on the same non-negative scale as average-pooled image
features). Forward, analytic backward, and Adam updates are implemented
directly on numpy arrays; everything is a pure function of its inputs
plus an explicit RNG stream, so runs are bit-reproducible.

Checkpoint layout (little-endian):

    magic "XMMC" | u32 version=1 | u32 input_dim | u32 n_blocks
    per block: u32 in | u32 out | f32 dropout | u8 l2flag
               | weights (out*in f32, row-major) | bias (out f32)
    u8 adam_present
    if 1: u64 t | f64 lr | f64 beta1 | f64 beta2 | f64 epsilon
          per block: mW | mb | vW | vb   (f32, same shapes as params)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigMismatch,
    IoFailure,
    MalformedHeader,
    MalformedRecord,
    NonFiniteInput,
    ShapeMismatch,
    TraceMismatch,
)
from .store import atomic_write_bytes

NORM_EPS = 1e-12  # floor for every norm division, forward and Jacobian

CKPT_MAGIC = b"XMMC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ProjectionConfig:
    input_dim: int
    layer_dims: tuple[int, ...] = (1024, 2048, 2048)
    dropout_rates: tuple[float, ...] = (0.2, 0.1, 0.0)
    l2norm_flags: tuple[bool, ...] = (True, True, False)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        object.__setattr__(self, "l2norm_flags", tuple(bool(f) for f in self.l2norm_flags))
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        n = len(self.layer_dims)
        if n < 1 or len(self.dropout_rates) != n or len(self.l2norm_flags) != n:
            raise ValueError("layer_dims, dropout_rates, l2norm_flags must have equal length >= 1")
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError("layer widths must be positive")
        if any(not (0.0 <= r < 1.0) for r in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_blocks(self) -> int:
        return len(self.layer_dims)


@dataclass
class ProjectionParams:
    """Weights (out x in) and biases per block, plus the per-block
    structure needed to run them (dropout rate, l2 flag)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rates: tuple[float, ...]
    l2norm_flags: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases)
                == len(self.dropout_rates) == len(self.l2norm_flags)):
            raise ShapeMismatch("per-block lists have different lengths")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeMismatch(f"block {k}: weight {w.shape} vs bias {b.shape}")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeMismatch(
                    f"block {k} input width {w.shape[1]} != block {k-1} output width "
                    f"{self.weights[k-1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteInput(f"block {k}: non-finite parameter values")

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def n_blocks(self) -> int:
        return len(self.weights)

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def astype(self, dtype) -> "ProjectionParams":
        return ProjectionParams(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            dropout_rates=self.dropout_rates,
            l2norm_flags=self.l2norm_flags,
        )

    def copy(self) -> "ProjectionParams":
        return self.astype(self.dtype)


@dataclass
class Gradients:
    """Per-block parameter gradients, same shapes as the params."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardTrace:
    """Everything backward needs from one forward call."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    dropout_masks: list[np.ndarray | None]   # scaled masks, None when inactive
    post_relu: list[np.ndarray]
    norms: list[np.ndarray | None]           # floored (n,1) norms, None when no l2
    output: np.ndarray
    mode: str


def init_params(config: ProjectionConfig) -> ProjectionParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    fan_in = config.input_dim
    for out in config.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(out, fan_in)).astype(np.float32))
        biases.append(np.zeros(out, dtype=np.float32))
        fan_in = out
    return ProjectionParams(
        weights=weights,
        biases=biases,
        dropout_rates=config.dropout_rates,
        l2norm_flags=config.l2norm_flags,
    )


def forward(
    params: ProjectionParams,
    inputs: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the block stack. Train mode applies inverted dropout (mask
    scaled by 1/(1-p)) from the given rng; eval mode is deterministic."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(inputs, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeMismatch(
            f"input shape {x.shape} incompatible with input_dim {params.input_dim}"
        )
    if x.size and not np.isfinite(x).all():
        raise NonFiniteInput("forward input contains NaN or Inf")
    if mode == "train" and rng is None and any(r > 0 for r in params.dropout_rates):
        raise ValueError("train-mode forward with dropout requires an rng")

    pre_activations: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    post_relu: list[np.ndarray] = []
    norms: list[np.ndarray | None] = []
    for w, b, rate, normed in zip(
        params.weights, params.biases, params.dropout_rates, params.l2norm_flags
    ):
        z = x @ w.T + b
        pre_activations.append(z)
        if mode == "train" and rate > 0.0:
            keep = rng.random(z.shape) >= rate
            mask = keep.astype(z.dtype) / z.dtype.type(1.0 - rate)
            z = z * mask
            masks.append(mask)
        else:
            masks.append(None)
        h = np.maximum(z, 0.0)
        post_relu.append(h)
        if normed:
            r = np.maximum(np.linalg.norm(h, axis=1, keepdims=True), NORM_EPS)
            norms.append(r)
            x = h / r
        else:
            norms.append(None)
            x = h
    trace = ForwardTrace(
        inputs=np.asarray(inputs, dtype=params.dtype),
        pre_activations=pre_activations,
        dropout_masks=masks,
        post_relu=post_relu,
        norms=norms,
        output=x,
        mode=mode,
    )
    return x, trace


def _block_output(trace: ForwardTrace, k: int) -> np.ndarray:
    h = trace.post_relu[k]
    r = trace.norms[k]
    return h / r if r is not None else h


def backward(
    params: ProjectionParams,
    trace: ForwardTrace,
    upstream: np.ndarray,
) -> tuple[Gradients, np.ndarray]:
    """Analytic gradients of the forward stack.

    Returns (param gradients, gradient w.r.t. the network input). The
    l2-norm Jacobian is (I - y y^T) / max(||h||, eps) per row; dropout
    reuses the stored scaled mask; ReLU gates on the stored
    post-activation sign.
    """
    if len(trace.post_relu) != params.n_blocks:
        raise TraceMismatch("trace block count differs from params")
    g = np.asarray(upstream, dtype=params.dtype)
    if g.shape != trace.output.shape:
        raise TraceMismatch(
            f"upstream shape {g.shape} != forward output shape {trace.output.shape}"
        )
    if trace.inputs.shape[1] != params.input_dim:
        raise TraceMismatch("trace input width differs from params input_dim")
    for k, (w, h) in enumerate(zip(params.weights, trace.post_relu)):
        if h.shape[1] != w.shape[0]:
            raise TraceMismatch(f"block {k}: trace width {h.shape[1]} != params {w.shape[0]}")

    d_weights: list[np.ndarray | None] = [None] * params.n_blocks
    d_biases: list[np.ndarray | None] = [None] * params.n_blocks
    for k in range(params.n_blocks - 1, -1, -1):
        h = trace.post_relu[k]
        r = trace.norms[k]
        if r is not None:
            y = h / r
            g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / r
        g = g * (h > 0)
        mask = trace.dropout_masks[k]
        if mask is not None:
            g = g * mask
        x_in = trace.inputs if k == 0 else _block_output(trace, k - 1)
        d_weights[k] = g.T @ x_in
        d_biases[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return Gradients(weights=d_weights, biases=d_biases), g


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators; t counts completed steps."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ProjectionParams, **hyper) -> "AdamState":
        zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
        return cls(
            m_weights=zeros(params.weights),
            m_biases=zeros(params.biases),
            v_weights=zeros(params.weights),
            v_biases=zeros(params.biases),
            **hyper,
        )


def adam_step(
    state: AdamState,
    params: ProjectionParams,
    grads: Gradients,
) -> tuple[ProjectionParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    for w, gw in zip(params.weights, grads.weights):
        if w.shape != gw.shape:
            raise ShapeMismatch(f"gradient shape {gw.shape} != param shape {w.shape}")
    for b, gb in zip(params.biases, grads.biases):
        if b.shape != gb.shape:
            raise ShapeMismatch(f"gradient shape {gb.shape} != param shape {b.shape}")

    dtype = params.dtype
    t = state.t + 1
    b1 = dtype.type(state.beta1)
    b2 = dtype.type(state.beta2)
    corr1 = dtype.type(1.0 - state.beta1 ** t)
    corr2 = dtype.type(1.0 - state.beta2 ** t)
    lr = dtype.type(state.lr)
    eps = dtype.type(state.epsilon)
    one = dtype.type(1.0)

    def update(p, g, m, v):
        m_new = b1 * m + (one - b1) * g
        v_new = b2 * v + (one - b2) * (g * g)
        m_hat = m_new / corr1
        v_hat = v_new / corr2
        p_new = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        return p_new, m_new, v_new

    new_w, new_b = [], []
    m_w, m_b, v_w, v_b = [], [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_weights, state.v_weights):
        p2, m2, v2 = update(p, g.astype(dtype), m, v)
        new_w.append(p2); m_w.append(m2); v_w.append(v2)
    for p, g, m, v in zip(params.biases, grads.biases, state.m_biases, state.v_biases):
        p2, m2, v2 = update(p, g.astype(dtype), m, v)
        new_b.append(p2); m_b.append(m2); v_b.append(v2)

    new_params = ProjectionParams(
        weights=new_w,
        biases=new_b,
        dropout_rates=params.dropout_rates,
        l2norm_flags=params.l2norm_flags,
    )
    new_state = replace(
        state, m_weights=m_w, m_biases=m_b, v_weights=v_w, v_biases=v_b, t=t
    )
    return new_params, new_state


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(
    path: str | Path,
    params: ProjectionParams,
    adam: AdamState | None = None,
) -> None:
    chunks = [
        CKPT_MAGIC,
        struct.pack("<III", CKPT_VERSION, params.input_dim, params.n_blocks),
    ]
    for w, b, rate, flag in zip(
        params.weights, params.biases, params.dropout_rates, params.l2norm_flags
    ):
        out, in_ = w.shape
        chunks.append(struct.pack("<IIfB", in_, out, rate, int(flag)))
        chunks.append(w.astype("<f4", copy=False).tobytes())
        chunks.append(b.astype("<f4", copy=False).tobytes())
    if adam is None:
        chunks.append(b"\x00")
    else:
        chunks.append(b"\x01")
        chunks.append(
            struct.pack("<Qdddd", adam.t, adam.lr, adam.beta1, adam.beta2, adam.epsilon)
        )
        for mw, mb, vw, vb in zip(adam.m_weights, adam.m_biases, adam.v_weights, adam.v_biases):
            chunks.append(mw.astype("<f4", copy=False).tobytes())
            chunks.append(mb.astype("<f4", copy=False).tobytes())
            chunks.append(vw.astype("<f4", copy=False).tobytes())
            chunks.append(vb.astype("<f4", copy=False).tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ProjectionParams, AdamState | None]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < 4 or data[:4] != CKPT_MAGIC:
        raise MalformedHeader("bad magic (expected XMMC)")
    if len(data) < 16:
        raise MalformedHeader("header truncated")
    version, input_dim, n_blocks = struct.unpack_from("<III", data, 4)
    if version != CKPT_VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if input_dim == 0 or n_blocks == 0:
        raise MalformedHeader("zero input_dim or block count")
    offset = 16
    weights, biases = [], []
    rates, flags = [], []
    expect_in = input_dim
    for k in range(n_blocks):
        if offset + 13 > len(data):
            raise MalformedRecord(f"block {k}: header truncated")
        in_, out, rate, flag = struct.unpack_from("<IIfB", data, offset)
        offset += 13
        if in_ != expect_in:
            raise MalformedRecord(f"block {k}: input width {in_} breaks the shape chain")
        if out == 0:
            raise MalformedRecord(f"block {k}: zero output width")
        if not (0.0 <= rate < 1.0):
            raise MalformedRecord(f"block {k}: dropout rate {rate} outside [0,1)")
        w_bytes, b_bytes = 4 * in_ * out, 4 * out
        if offset + w_bytes + b_bytes > len(data):
            raise MalformedRecord(f"block {k}: parameter payload truncated")
        w = np.frombuffer(data, "<f4", count=in_ * out, offset=offset).reshape(out, in_).copy()
        offset += w_bytes
        b = np.frombuffer(data, "<f4", count=out, offset=offset).copy()
        offset += b_bytes
        weights.append(w)
        biases.append(b)
        rates.append(float(rate))
        flags.append(bool(flag))
        expect_in = out
    if offset + 1 > len(data):
        raise MalformedRecord("missing optimizer-state flag")
    adam_present = data[offset]
    offset += 1
    params = ProjectionParams(
        weights=weights, biases=biases,
        dropout_rates=tuple(rates), l2norm_flags=tuple(flags),
    )
    if adam_present == 0:
        if offset != len(data):
            raise MalformedRecord(f"{len(data) - offset} trailing bytes")
        return params, None
    if adam_present != 1:
        raise MalformedRecord(f"bad optimizer-state flag {adam_present}")
    if offset + 40 > len(data):
        raise MalformedRecord("optimizer-state header truncated")
    t, lr, beta1, beta2, epsilon = struct.unpack_from("<Qdddd", data, offset)
    offset += 40
    m_w, m_b, v_w, v_b = [], [], [], []
    for k, w in enumerate(weights):
        out, in_ = w.shape
        need = 2 * (4 * in_ * out + 4 * out)
        if offset + need > len(data):
            raise MalformedRecord(f"block {k}: optimizer payload truncated")
        m_w.append(np.frombuffer(data, "<f4", count=in_ * out, offset=offset).reshape(out, in_).copy())
        offset += 4 * in_ * out
        m_b.append(np.frombuffer(data, "<f4", count=out, offset=offset).copy())
        offset += 4 * out
        v_w.append(np.frombuffer(data, "<f4", count=in_ * out, offset=offset).reshape(out, in_).copy())
        offset += 4 * in_ * out
        v_b.append(np.frombuffer(data, "<f4", count=out, offset=offset).copy())
        offset += 4 * out
    if offset != len(data):
        raise MalformedRecord(f"{len(data) - offset} trailing bytes")
    adam = AdamState(
        m_weights=m_w, m_biases=m_b, v_weights=v_w, v_biases=v_b,
        t=int(t), lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
    )
    return params, adam


def check_arch(params: ProjectionParams, config: ProjectionConfig) -> None:
    """Raise ConfigMismatch unless the params realize exactly this config."""
    got = (
        params.input_dim,
        tuple(w.shape[0] for w in params.weights),
        params.dropout_rates,
        params.l2norm_flags,
    )
    want = (config.input_dim, config.layer_dims, config.dropout_rates, config.l2norm_flags)
    if got[0] != want[0] or got[1] != want[1] or got[3] != want[3]:
        raise ConfigMismatch(f"checkpoint architecture {got[:2]} != config {want[:2]}")
    if any(abs(a - b) > 1e-7 for a, b in zip(got[2], want[2])):
        raise ConfigMismatch(f"checkpoint dropout rates {got[2]} != config {want[2]}")
