#!/usr/bin/env python3
"""Generate a small demo corpus (embedding files + pair manifest) so the
CLI examples in the README run end to end without external encoders.

Writes into --out-dir:
    images.xemb   48 image embeddings (16-d, non-negative unit vectors)
    texts.xemb    caption embeddings for two "languages" (24-d)
    vocab.xemb    raw embeddings for a 6-tag target vocabulary
    source.xemb   raw embeddings for 2 source tags
    request.tsv   tag request (source_tag TAB embedding-id)
    pairs.tsv     caption-image manifest with train/test splits
    train.cfg     a training config sized for this corpus
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from xmodal.store import (
    EmbeddingTable,
    PairManifest,
    PairRecord,
    save_manifest,
    save_table,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("demo-data"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--concepts", type=int, default=48)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    n, text_dim, image_dim = args.concepts, 24, 16
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    centers = np.abs(rng.standard_normal((n, image_dim))).astype(np.float32)
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    concepts = rng.standard_normal((n, text_dim)).astype(np.float32)

    save_table(
        EmbeddingTable(
            ids=tuple(f"im{i:03d}" for i in range(n)), vectors=centers, modality="image"
        ),
        out / "images.xemb",
    )

    ids, vectors, records = [], [], []
    plan = (("en", "train"), ("en", "train"), ("en", "test"), ("de", "test"))
    for i in range(n):
        for j, (lang, split) in enumerate(plan):
            cid = f"cap{i:03d}-{lang}-{j}"
            ids.append(cid)
            vectors.append(concepts[i] + 0.05 * rng.standard_normal(text_dim).astype(np.float32))
            records.append(PairRecord(cid, f"im{i:03d}", lang, split))
    save_table(
        EmbeddingTable(ids=tuple(ids), vectors=np.array(vectors, np.float32), modality="text"),
        out / "texts.xemb",
    )
    save_manifest(PairManifest(records=tuple(records)), out / "pairs.tsv")

    vocab_tags = ("hund", "katze", "baum", "wasser", "himmel", "haus")
    save_table(
        EmbeddingTable(
            ids=vocab_tags,
            vectors=rng.standard_normal((len(vocab_tags), text_dim)).astype(np.float32),
            modality="text",
        ),
        out / "vocab.xemb",
    )
    save_table(
        EmbeddingTable(
            ids=("dog", "cat"),
            vectors=rng.standard_normal((2, text_dim)).astype(np.float32),
            modality="text",
        ),
        out / "source.xemb",
    )
    (out / "request.tsv").write_text("dog\tdog\ncat\tcat\n")
    (out / "train.cfg").write_text(
        "layer_dims = 32,16\n"
        "dropout_rates = 0.1,0\n"
        "l2norm_flags = true,true\n"
        "epochs = 300\n"
        "batch_size = 32\n"
        "rho = 1\n"
        "alpha2 = 0.25\n"
        "eta = 1.0\n"
    )
    print(f"demo corpus written to {out}/", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
