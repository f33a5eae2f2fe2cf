import hashlib
from pathlib import Path

import numpy as np
import pytest

from xmodal.store import (
    EmbeddingTable,
    PairManifest,
    PairRecord,
    save_manifest,
    save_table,
)


@pytest.fixture
def pipeline_fixture(tmp_path):
    """A tiny but learnable caption/image corpus on disk: 24 concepts,
    train+test captions in 'en' plus test captions in 'xx' (copies of the
    'en' vectors with fresh noise, standing in for an aligned encoder)."""
    rng = np.random.default_rng(123)
    n, dim_t, dim_i = 24, 10, 8
    centers = np.abs(rng.standard_normal((n, dim_i))).astype(np.float32)
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    concepts = rng.standard_normal((n, dim_t)).astype(np.float32)

    images = EmbeddingTable(
        ids=tuple(f"im{i}" for i in range(n)), vectors=centers, modality="image"
    )

    ids, vecs, records = [], [], []
    for i in range(n):
        for j, (lang, split) in enumerate(
            (("en", "train"), ("en", "train"), ("en", "test"), ("xx", "test"))
        ):
            cid = f"c{i}-{j}"
            ids.append(cid)
            vecs.append(concepts[i] + 0.05 * rng.standard_normal(dim_t).astype(np.float32))
            records.append(PairRecord(cid, f"im{i}", lang, split))
    texts = EmbeddingTable(
        ids=tuple(ids), vectors=np.array(vecs, dtype=np.float32), modality="text"
    )

    paths = {
        "dir": tmp_path,
        "images": tmp_path / "images.xemb",
        "texts": tmp_path / "texts.xemb",
        "pairs": tmp_path / "pairs.tsv",
        "config": tmp_path / "train.cfg",
        "checkpoint": tmp_path / "model.xmmc",
    }
    save_table(images, paths["images"])
    save_table(texts, paths["texts"])
    save_manifest(PairManifest(records=tuple(records)), paths["pairs"])
    paths["config"].write_text(
        "# tiny head for the test corpus\n"
        "layer_dims = 12,8\n"
        "dropout_rates = 0.1,0\n"
        "l2norm_flags = true,true\n"
        "epochs = 300\n"
        "batch_size = 16\n"
        "rho = 1\n"
        "alpha2 = 0.25\n"
        "eta = 1.0\n"
    )
    return paths


def file_hashes(*paths: Path) -> dict:
    return {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}
