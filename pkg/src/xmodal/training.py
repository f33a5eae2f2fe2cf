"""Training loop: shuffle, batch, project, mine, backprop, update.

Fully deterministic for a given (dataset, config): the shuffle order and
every dropout mask come from streams derived only from (seed, epoch,
batch index), so a resumed run replays exactly the same randomness as an
uninterrupted one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigMismatch,
    DimensionMismatch,
    EmptyDataset,
    IoFailure,
    MalformedRow,
    MissingOptimizerState,
)
from .losses import M3LHyperparams, PATRHyperparams, TripletBatch, m3l_loss, patr_loss
from .mining import mine_hard_negatives
from .projection import (
    AdamState,
    ProjectionConfig,
    ProjectionParams,
    adam_step,
    backward,
    check_arch,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .store import PairedDataset, atomic_write_text

_STREAM_SHUFFLE = 0
_STREAM_DROPOUT = 1

LOSSES = ("m3l", "patr")


@dataclass(frozen=True)
class TrainConfig:
    projection: ProjectionConfig
    batch_size: int = 128
    epochs: int = 50
    loss: str = "m3l"
    m3l: M3LHyperparams = field(default_factory=M3LHyperparams)
    patr: PATRHyperparams = field(default_factory=PATRHyperparams)
    seed: int = 0
    checkpoint_path: str | Path | None = None
    checkpoint_every: int = 10
    log_every: int = 0   # batches between stderr progress lines; 0 = silent

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    degenerate_denominators: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch_losses)


def history_path_for(checkpoint_path: str | Path) -> Path:
    return Path(str(checkpoint_path) + ".history.tsv")


def save_history(history: TrainHistory, path: str | Path) -> None:
    lines = ["epoch\tmean_loss\tseconds\tdegenerate_denominators"]
    for e, (loss, sec, deg) in enumerate(
        zip(history.epoch_losses, history.epoch_seconds, history.degenerate_denominators)
    ):
        lines.append(f"{e}\t{loss!r}\t{sec:.3f}\t{deg}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_history(path: str | Path) -> TrainHistory:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    history = TrainHistory()
    for lineno, line in enumerate(text.splitlines()[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 4:
            raise MalformedRow(f"line {lineno}: expected 4 columns")
        history.epoch_losses.append(float(parts[1]))
        history.epoch_seconds.append(float(parts[2]))
        history.degenerate_denominators.append(int(parts[3]))
    return history


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Slice boundaries for one epoch: full batches, then the trailing
    remainder if it still has the >= 2 rows mining needs."""
    bounds = [(s, s + batch_size) for s in range(0, n - batch_size + 1, batch_size)]
    tail = n - len(bounds) * batch_size
    if tail >= 2:
        bounds.append((n - tail, n))
    return bounds


def steps_per_epoch(n: int, batch_size: int) -> int:
    return len(batch_bounds(n, batch_size))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _validate(dataset: PairedDataset, config: TrainConfig) -> None:
    if len(dataset) == 0:
        raise EmptyDataset("training dataset has no pairs")
    if dataset.text_vectors.shape[1] != config.projection.input_dim:
        raise DimensionMismatch(
            f"text width {dataset.text_vectors.shape[1]} != projection input_dim "
            f"{config.projection.input_dim}"
        )
    if dataset.image_vectors.shape[1] != config.projection.output_dim:
        raise DimensionMismatch(
            f"image width {dataset.image_vectors.shape[1]} != projection output "
            f"width {config.projection.output_dim}"
        )
    if steps_per_epoch(len(dataset), config.batch_size) == 0:
        raise EmptyDataset(
            f"{len(dataset)} pairs yield zero usable batches at batch_size "
            f"{config.batch_size}"
        )


def _run_epochs(
    dataset: PairedDataset,
    config: TrainConfig,
    params: ProjectionParams,
    adam: AdamState,
    history: TrainHistory,
    start_epoch: int,
) -> tuple[ProjectionParams, TrainHistory]:
    import sys

    n = len(dataset)
    bounds = batch_bounds(n, config.batch_size)
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        order = _stream(config.seed, _STREAM_SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        rows_seen = 0
        degenerate = 0
        for b_idx, (lo, hi) in enumerate(bounds):
            idx = order[lo:hi]
            texts = dataset.text_vectors[idx]
            images = dataset.image_vectors[idx]
            rng = _stream(config.seed, _STREAM_DROPOUT, epoch, b_idx)
            projected, trace = forward(params, texts, mode="train", rng=rng)
            neg = mine_hard_negatives(projected, images)
            batch = TripletBatch(
                anchor_text=projected,
                pos_image=images,
                neg_image=images[neg],
                neg_text=projected[neg],
            )
            if config.loss == "m3l":
                out = m3l_loss(batch, config.m3l)
            else:
                out = patr_loss(batch, config.patr)
            upstream = out.grad_anchor.copy()
            if out.grad_neg_text is not None:
                # negative texts are rows of this same forward pass: fold their
                # gradient back onto the projected batch before one backward
                np.add.at(upstream, neg, out.grad_neg_text)
            grads, _ = backward(params, trace, upstream)
            params, adam = adam_step(adam, params, grads)
            loss_sum += out.loss * len(idx)
            rows_seen += len(idx)
            degenerate += out.degenerate_denominators
            if config.log_every and (b_idx + 1) % config.log_every == 0:
                print(
                    f"epoch {epoch} batch {b_idx + 1}/{len(bounds)} loss {out.loss:.6g}",
                    file=sys.stderr,
                )
        history.epoch_losses.append(loss_sum / rows_seen)
        history.epoch_seconds.append(time.perf_counter() - t0)
        history.degenerate_denominators.append(degenerate)
        if config.checkpoint_path is not None and (
            (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs
        ):
            save_checkpoint(config.checkpoint_path, params, adam)
            save_history(history, history_path_for(config.checkpoint_path))
    return params, history


def train(dataset: PairedDataset, config: TrainConfig) -> tuple[ProjectionParams, TrainHistory]:
    """Train from fresh init for config.epochs epochs."""
    _validate(dataset, config)
    params = init_params(config.projection)
    adam = AdamState.fresh(params)
    return _run_epochs(dataset, config, params, adam, TrainHistory(), start_epoch=0)


def resume(
    checkpoint_path: str | Path,
    dataset: PairedDataset,
    config: TrainConfig,
) -> tuple[ProjectionParams, TrainHistory]:
    """Continue training from a checkpoint up to config.epochs total.

    Bit-identical to an uninterrupted run: the per-epoch RNG streams are
    derived from the epoch counter, which is recovered from the stored
    Adam step count.
    """
    _validate(dataset, config)
    params, adam = load_checkpoint(checkpoint_path)
    if adam is None:
        raise MissingOptimizerState(f"{checkpoint_path} has no optimizer-state section")
    check_arch(params, config.projection)
    spe = steps_per_epoch(len(dataset), config.batch_size)
    if adam.t % spe != 0:
        raise ConfigMismatch(
            f"checkpoint step count {adam.t} is not a whole number of epochs "
            f"({spe} steps each) over this dataset"
        )
    done = adam.t // spe
    if done > config.epochs:
        raise ConfigMismatch(
            f"checkpoint already has {done} epochs, config asks for {config.epochs}"
        )
    hist_file = history_path_for(checkpoint_path)
    history = load_history(hist_file) if hist_file.exists() else TrainHistory()
    if len(history) > done:
        history = TrainHistory(
            epoch_losses=history.epoch_losses[:done],
            epoch_seconds=history.epoch_seconds[:done],
            degenerate_denominators=history.degenerate_denominators[:done],
        )
    return _run_epochs(dataset, config, params, adam, history, start_epoch=done)
