"""Command-line entry point.

Subcommands: train, project, retrieve, eval-retrieval, tag, synth-bench,
gradcheck. Logs go to stderr, data to stdout or --out (written
atomically), so the tool composes in pipelines. Exit codes: 0 success,
1 user error (bad flags or files), 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from . import synthetic
from .errors import XmodalError
from .losses import M3LHyperparams, PATRHyperparams
from .projection import ProjectionConfig, load_checkpoint
from .retrieval import build_index, evaluate, rank, report_tsv
from .store import (
    EmbeddingTable,
    assemble_dataset,
    atomic_write_text,
    l2_normalize_rows,
    load_manifest,
    load_table,
    save_table,
)
from .tagging import TaggingWeights, assign_tags, build_vocab
from .training import TrainConfig, resume, train
from .projection import forward


class _UsageError(XmodalError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract wants 1 for user error."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# config file

_LIST_KEYS = {"layer_dims", "dropout_rates", "l2norm_flags"}
_KNOWN_KEYS = {
    "batch_size", "epochs", "loss", "seed", "checkpoint_every", "log_every",
    "rho", "alpha1", "alpha2", "eta",
    "layer_dims", "dropout_rates", "l2norm_flags",
}


def parse_config_file(path: str | Path) -> dict:
    """Flat `key = value` text; '#' starts a comment; list values are
    comma-separated. Keys mirror the training-config field names."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _UsageError(f"cannot read config {path}: {exc}") from exc
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _KNOWN_KEYS:
            raise _UsageError(f"config line {lineno}: unknown key {key!r}")
        values[key] = (
            tuple(part.strip() for part in raw.split(",")) if key in _LIST_KEYS else raw
        )
    return values


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise _UsageError(f"expected a boolean, got {raw!r}")


def _build_train_config(args, input_dim: int, output_dim: int) -> TrainConfig:
    file_cfg = parse_config_file(args.config) if args.config else {}

    def pick(key, flag_value, cast, default):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return cast(file_cfg[key])
        return default

    layer_dims = tuple(int(v) for v in file_cfg.get("layer_dims", ()))
    if not layer_dims:
        layer_dims = (1024, 2048, output_dim) if output_dim == 2048 else None
        if layer_dims is None:
            raise _UsageError(
                f"image embeddings are {output_dim}-d; set layer_dims in the "
                f"config file (the default head ends at 2048)"
            )
    dropout = tuple(float(v) for v in file_cfg.get("dropout_rates", ()))
    if not dropout:
        dropout = (0.2, 0.1, 0.0) if len(layer_dims) == 3 else (0.0,) * len(layer_dims)
    flags = tuple(_parse_bool(v) for v in file_cfg.get("l2norm_flags", ()))
    if not flags:
        flags = tuple([True] * (len(layer_dims) - 1) + [False])

    seed = int(pick("seed", args.seed, int, 0))
    projection = ProjectionConfig(
        input_dim=input_dim,
        layer_dims=layer_dims,
        dropout_rates=dropout,
        l2norm_flags=flags,
        seed=seed,
    )
    try:
        return TrainConfig(
            projection=projection,
            batch_size=int(pick("batch_size", args.batch_size, int, 128)),
            epochs=int(pick("epochs", args.epochs, int, 50)),
            loss=pick("loss", args.loss, str, "m3l"),
            m3l=M3LHyperparams(
                rho=float(pick("rho", None, float, 4.0)),
                alpha1=float(pick("alpha1", None, float, 0.5)),
                alpha2=float(pick("alpha2", None, float, 1.0)),
            ),
            patr=PATRHyperparams(eta=float(pick("eta", None, float, 1100.0))),
            seed=seed,
            checkpoint_path=args.out,
            checkpoint_every=int(pick("checkpoint_every", None, int, 10)),
            log_every=int(pick("log_every", None, int, 0)),
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def _load_text_table(path, normalize: bool) -> EmbeddingTable:
    table = load_table(path, format="binary")
    if normalize:
        table = EmbeddingTable(
            ids=table.ids,
            vectors=l2_normalize_rows(table.vectors),
            modality=table.modality,
            language=table.language,
        )
    return table


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_train(args) -> int:
    texts = _load_text_table(args.text_emb, args.l2_normalize_text)
    images = load_table(args.image_emb, format="binary")
    manifest = load_manifest(args.pairs)
    dataset = assemble_dataset(manifest, texts, images, split=args.split)
    config = _build_train_config(args, input_dim=texts.dim, output_dim=images.dim)
    if args.resume:
        params, history = resume(args.out, dataset, config)
    else:
        params, history = train(dataset, config)
    print(
        f"trained {config.epochs} epochs, final mean loss "
        f"{history.epoch_losses[-1]:.6g}, checkpoint at {args.out}",
        file=sys.stderr,
    )
    return 0


def cmd_project(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    texts = _load_text_table(args.text_emb, args.l2_normalize_text)
    projected, _ = forward(params, texts.vectors, mode="eval")
    out_table = EmbeddingTable(
        ids=texts.ids,
        vectors=projected.astype(np.float32),
        modality="text",
        language=texts.language,
    )
    save_table(out_table, args.out, format="binary")
    print(f"projected {len(out_table)} texts -> {args.out}", file=sys.stderr)
    return 0


def cmd_retrieve(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    images = load_table(args.image_emb, format="binary")
    queries = _load_text_table(args.query_emb, args.l2_normalize_text)
    index = build_index(images)
    projected, _ = forward(params, queries.vectors, mode="eval")
    metric = "cosine" if args.metric == "cosine" else "square_distance"
    lines = ["query_id\trank\timage_id\tscore"]
    for qid, vec in zip(queries.ids, projected):
        ranking = rank(vec, index, metric=metric, top_k=args.top_k, threshold=args.threshold)
        for position, (image_id, score) in enumerate(ranking.entries, start=1):
            lines.append(f"{qid}\t{position}\t{image_id}\t{score!r}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_eval_retrieval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    texts = _load_text_table(args.text_emb, args.l2_normalize_text)
    images = load_table(args.image_emb, format="binary")
    manifest = load_manifest(args.pairs)
    dataset = assemble_dataset(manifest, texts, images, split=args.split)
    metric = "cosine" if args.metric == "cosine" else "square_distance"
    rows = evaluate(params, dataset, images, k=args.k, metric=metric)
    _emit(report_tsv(rows, metric), args.out)
    return 0


def cmd_tag(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    images = load_table(args.image_emb, format="binary")
    try:
        image_vec = images.row(args.image_id)
    except ValueError:
        raise _UsageError(f"image id {args.image_id!r} not in {args.image_emb}")
    raw_vocab = load_table(args.vocab_emb, format="binary")
    vocab = build_vocab(raw_vocab, params)
    source_raw = load_table(args.source_emb, format="binary")
    # request rows: source_tag TAB embedding-id (id into the source table)
    source_tags: list[str] = []
    source_rows: list[np.ndarray] = []
    try:
        request = Path(args.source_tags).read_text(encoding="utf-8")
    except OSError as exc:
        raise _UsageError(f"cannot read {args.source_tags}: {exc}") from exc
    for lineno, line in enumerate(request.splitlines(), start=1):
        if line.startswith("#") or not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise _UsageError(
                f"{args.source_tags}:{lineno}: expected 'source_tag<TAB>embedding-id'"
            )
        tag, emb_id = parts
        try:
            raw_vec = source_raw.row(emb_id)
        except ValueError:
            raise _UsageError(f"{args.source_tags}:{lineno}: id {emb_id!r} not in source table")
        source_tags.append(tag)
        source_rows.append(raw_vec)
    projected_sources, _ = forward(
        params, np.vstack(source_rows) if source_rows else np.empty((0, source_raw.dim), np.float32),
        mode="eval",
    )
    weights = TaggingWeights(w1=args.w1, w2=args.w2)
    assignment = assign_tags(image_vec, source_tags, projected_sources, vocab, weights)
    lines = ["source_tag\ttarget_tag\tscore\trank_considered"]
    for pair in assignment.pairs:
        lines.append(f"{pair.source_tag}\t{pair.target_tag}\t{pair.score:.6f}\t{pair.rank_considered}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_synth_bench(args) -> int:
    losses = ("m3l", "patr") if args.loss == "both" else (args.loss,)
    cfg = synthetic.SynthConfig(seed=args.seed)
    results = synthetic.run_benchmark(cfg, losses=losses)
    _emit(synthetic.report_tsv(results), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    results = gc.run_suite(trials=args.trials)
    failures = [r for r in results if not r.passed]
    worst = max(r.rel_error for r in results)
    print(
        f"gradcheck: {len(results)} comparisons, {len(failures)} failures, "
        f"worst relative error {worst:.3e}",
        file=sys.stderr,
    )
    for r in failures[:20]:
        print(f"  FAIL {r.name}: rel error {r.rel_error:.3e}", file=sys.stderr)
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# wiring


def _add_common_text_flags(p) -> None:
    p.add_argument("--l2-normalize-text", action="store_true",
                   help="l2-normalize raw text embeddings after loading (default off)")


def build_parser() -> _Parser:
    parser = _Parser(prog="xmodal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the projection head on caption-image pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--image-emb", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--loss", choices=("m3l", "patr"), default=None)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--split", choices=("train", "dev", "test"), default="train")
    p.add_argument("--resume", action="store_true",
                   help="continue training from the checkpoint at --out")
    _add_common_text_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("project", help="project raw text embeddings into image space")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--out", required=True)
    _add_common_text_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("retrieve", help="rank indexed images against text queries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-emb", required=True)
    p.add_argument("--query-emb", required=True)
    p.add_argument("--metric", choices=("cosine", "sqdist"), default="cosine")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default=None)
    _add_common_text_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval-retrieval", help="Recall@k per language over a pair manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--image-emb", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--metric", choices=("cosine", "sqdist"), default="cosine")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--out", default=None)
    _add_common_text_flags(p)
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("tag", help="assign target-language tags to an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-emb", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--source-tags", required=True,
                   help="request tsv: source_tag TAB embedding-id")
    p.add_argument("--source-emb", required=True,
                   help="raw text embeddings for the source tags")
    p.add_argument("--vocab-emb", required=True,
                   help="raw text embeddings for the target vocabulary (ids = tags)")
    p.add_argument("--w1", type=float, default=0.65)
    p.add_argument("--w2", type=float, default=0.35)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("synth-bench", help="seeded synthetic zero-shot benchmark")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--loss", choices=("m3l", "patr", "both"), default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synth_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except XmodalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is an internal bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
