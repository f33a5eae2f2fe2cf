"""Embedding tables, pair manifests, and their on-disk formats.

Binary layout (canonical interchange, bit-exact floats), all little-endian:

    magic "XEMB" | u32 version=1 | u32 count | u32 dim | u8 modality
    per record:  u16 id byte length | id (UTF-8) | dim * f32

TSV layout (debugging convenience):

    header "id<TAB>dim=<d>", then one line per row:
    id <TAB> d space-separated floats (shortest decimal that round-trips
    the float32 value)

Manifest TSV: caption_id, image_id, language, split (no header, "#"
comments ignored).
"""

from __future__ import annotations

import os
import re
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    DuplicatePair,
    IoFailure,
    MalformedHeader,
    MalformedRecord,
    MalformedRow,
    NonFiniteValue,
    UnknownSplit,
    UnresolvedId,
)

MAGIC = b"XEMB"
VERSION = 1
MODALITIES = ("text", "image")
SPLITS = ("train", "dev", "test")

_TSV_HEADER_RE = re.compile(r"^id\tdim=([0-9]+)$")


def _as_float32_matrix(vectors, dim: int) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2:
        arr = arr.reshape(-1, dim) if arr.size else arr.reshape(0, dim)
    return np.ascontiguousarray(arr)


@dataclass
class EmbeddingTable:
    """Id-keyed matrix of fixed-dimension float32 vectors.

    Immutable after construction: the vector matrix is marked read-only
    and ids are held as a tuple, so tables can be shared freely across
    concurrent readers.
    """

    ids: tuple[str, ...]
    vectors: np.ndarray
    modality: str
    language: str | None = None

    def __post_init__(self):
        self.ids = tuple(self.ids)
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        vec = np.asarray(self.vectors)
        if vec.ndim != 2:
            raise DimensionMismatch(f"vectors must be 2-d, got shape {vec.shape}")
        if vec.shape[1] <= 0:
            raise DimensionMismatch("dim must be positive")
        if vec.dtype != np.float32:
            vec = vec.astype(np.float32)
        if len(self.ids) != vec.shape[0]:
            raise DimensionMismatch(
                f"{len(self.ids)} ids but {vec.shape[0]} vector rows"
            )
        if len(set(self.ids)) != len(self.ids):
            seen: set[str] = set()
            for i in self.ids:
                if i in seen:
                    raise DuplicateId(f"duplicate id {i!r}")
                seen.add(i)
        if vec.size and not np.isfinite(vec).all():
            raise NonFiniteValue("table contains NaN or Inf")
        vec = np.ascontiguousarray(vec)
        vec.flags.writeable = False
        object.__setattr__(self, "vectors", vec)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.modality == other.modality
            and self.language == other.language
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    def row(self, id_: str) -> np.ndarray:
        return self.vectors[self.ids.index(id_)]


class PairRecord(NamedTuple):
    caption_id: str
    image_id: str
    language: str
    split: str


@dataclass
class PairManifest:
    """Caption-image pair listing, line order preserved."""

    records: tuple[PairRecord, ...]

    def __post_init__(self):
        self.records = tuple(self.records)
        seen: dict[str, set[tuple[str, str]]] = {}
        for rec in self.records:
            if rec.split not in SPLITS:
                raise UnknownSplit(f"unknown split {rec.split!r}")
            pairs = seen.setdefault(rec.split, set())
            key = (rec.caption_id, rec.image_id)
            if key in pairs:
                raise DuplicatePair(
                    f"pair ({rec.caption_id!r}, {rec.image_id!r}) repeated in split {rec.split!r}"
                )
            pairs.add(key)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class PairedDataset:
    """Aligned caption/image rows for one split: row i of text_vectors is
    the embedding of caption_ids[i], paired with image_vectors[i]."""

    caption_ids: tuple[str, ...]
    image_ids: tuple[str, ...]
    languages: tuple[str, ...]
    text_vectors: np.ndarray
    image_vectors: np.ndarray
    split: str

    def __post_init__(self):
        n = len(self.caption_ids)
        if not (len(self.image_ids) == len(self.languages) == n
                == self.text_vectors.shape[0] == self.image_vectors.shape[0]):
            raise DimensionMismatch("dataset columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.caption_ids)


# ---------------------------------------------------------------------------
# atomic file output


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write data to path via a temp file + rename, so readers never see
    a half-written file."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# binary format


def _dump_binary(table: EmbeddingTable) -> bytes:
    chunks = [
        MAGIC,
        struct.pack(
            "<IIIB",
            VERSION,
            len(table),
            table.dim,
            MODALITIES.index(table.modality),
        ),
    ]
    vecs = table.vectors.astype("<f4", copy=False)
    for i, id_ in enumerate(table.ids):
        raw = id_.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise IoFailure(f"id longer than 65535 bytes: {id_[:32]!r}...")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(vecs[i].tobytes())
    return b"".join(chunks)


def _parse_binary(data: bytes, language: str | None) -> EmbeddingTable:
    if len(data) < 4 or data[:4] != MAGIC:
        raise MalformedHeader("bad magic (expected XEMB)")
    if len(data) < 17:
        raise MalformedHeader("header truncated")
    version, count, dim, modality_code = struct.unpack_from("<IIIB", data, 4)
    if version != VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if dim == 0:
        raise MalformedHeader("declared dim is 0")
    if modality_code >= len(MODALITIES):
        raise MalformedHeader(f"unknown modality code {modality_code}")
    # each record is at least 2 bytes of id length + dim floats; reject
    # impossible (count, dim) before allocating anything
    if count * (2 + 4 * dim) > len(data) - 17:
        raise MalformedRecord(
            f"file too small for {count} records of dim {dim}"
        )
    offset = 17
    ids: list[str] = []
    vectors = np.empty((count, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for row in range(count):
        if offset + 2 > len(data):
            raise MalformedRecord(f"record {row}: truncated id length")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + row_bytes > len(data):
            raise MalformedRecord(f"record {row}: truncated")
        try:
            ids.append(data[offset:offset + id_len].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise MalformedRecord(f"record {row}: id is not valid UTF-8") from exc
        offset += id_len
        vectors[row] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
    if offset != len(data):
        raise MalformedRecord(f"{len(data) - offset} trailing bytes after last record")
    return EmbeddingTable(
        ids=tuple(ids),
        vectors=vectors,
        modality=MODALITIES[modality_code],
        language=language,
    )


# ---------------------------------------------------------------------------
# tsv format

_TSV_FORBIDDEN = ("\t", "\n", "\r")


def _dump_tsv(table: EmbeddingTable) -> str:
    lines = [f"id\tdim={table.dim}"]
    for i, id_ in enumerate(table.ids):
        if any(c in id_ for c in _TSV_FORBIDDEN):
            raise IoFailure(f"id {id_!r} is not representable in tsv")
        floats = " ".join(
            np.format_float_positional(v, trim="-") for v in table.vectors[i]
        )
        lines.append(f"{id_}\t{floats}")
    return "\n".join(lines) + "\n"


def _split_lines(text: str) -> list[str]:
    # split on \n only: str.splitlines would also split on control
    # characters that are legal inside ids
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_tsv(text: str, modality: str, language: str | None) -> EmbeddingTable:
    lines = _split_lines(text)
    if not lines:
        raise MalformedHeader("empty file")
    m = _TSV_HEADER_RE.match(lines[0])
    if not m:
        raise MalformedHeader(f"bad tsv header {lines[0]!r}")
    dim = int(m.group(1))
    if dim == 0:
        raise MalformedHeader("declared dim is 0")
    if dim > 2**31:
        raise MalformedHeader(f"implausible dim {dim}")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedRow(f"line {lineno}: expected 'id<TAB>floats'")
        values = parts[1].split()
        if len(values) != dim:
            raise DimensionMismatch(
                f"line {lineno}: {len(values)} values, declared dim is {dim}"
            )
        try:
            row = np.array([np.float32(v) for v in values], dtype=np.float32)
        except ValueError as exc:
            raise MalformedRow(f"line {lineno}: unparseable float") from exc
        ids.append(parts[0])
        rows.append(row)
    vectors = (
        np.vstack(rows) if rows else np.empty((0, dim), dtype=np.float32)
    )
    return EmbeddingTable(ids=tuple(ids), vectors=vectors, modality=modality, language=language)


# ---------------------------------------------------------------------------
# public io


def save_table(table: EmbeddingTable, path: str | Path, format: str = "binary") -> None:
    if format == "binary":
        atomic_write_bytes(path, _dump_binary(table))
    elif format == "tsv":
        atomic_write_text(path, _dump_tsv(table))
    else:
        raise ValueError(f"unknown format {format!r}")


def load_table(
    path: str | Path,
    format: str = "binary",
    modality: str = "text",
    language: str | None = None,
) -> EmbeddingTable:
    """Load an embedding table.

    `modality` applies to tsv files only (the binary header carries its
    own modality byte). Raises a subclass of XmodalError on any
    malformed content; never silently truncates.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if format == "binary":
        return _parse_binary(data, language)
    if format == "tsv":
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRow("file is not valid UTF-8") from exc
        return _parse_tsv(text, modality, language)
    raise ValueError(f"unknown format {format!r}")


def load_manifest(path: str | Path) -> PairManifest:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRow("file is not valid UTF-8") from exc
    records: list[PairRecord] = []
    for lineno, line in enumerate(_split_lines(text), start=1):
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise MalformedRow(f"line {lineno}: expected 4 tab-separated columns")
        caption_id, image_id, language, split = parts
        if split not in SPLITS:
            raise UnknownSplit(f"line {lineno}: unknown split {split!r}")
        records.append(PairRecord(caption_id, image_id, language, split))
    return PairManifest(records=tuple(records))


def save_manifest(manifest: PairManifest, path: str | Path) -> None:
    lines = [
        f"{r.caption_id}\t{r.image_id}\t{r.language}\t{r.split}" for r in manifest.records
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def assemble_dataset(
    manifest: PairManifest,
    texts: EmbeddingTable,
    images: EmbeddingTable,
    split: str,
) -> PairedDataset:
    """Gather the aligned (text row, image row) arrays for one split."""
    if split not in SPLITS:
        raise UnknownSplit(f"unknown split {split!r}")
    text_index = {id_: i for i, id_ in enumerate(texts.ids)}
    image_index = {id_: i for i, id_ in enumerate(images.ids)}
    caption_ids: list[str] = []
    image_ids: list[str] = []
    languages: list[str] = []
    t_rows: list[int] = []
    i_rows: list[int] = []
    for rec in manifest.records:
        if rec.split != split:
            continue
        if rec.caption_id not in text_index:
            raise UnresolvedId(f"caption id {rec.caption_id!r} not in text table")
        if rec.image_id not in image_index:
            raise UnresolvedId(f"image id {rec.image_id!r} not in image table")
        caption_ids.append(rec.caption_id)
        image_ids.append(rec.image_id)
        languages.append(rec.language)
        t_rows.append(text_index[rec.caption_id])
        i_rows.append(image_index[rec.image_id])
    return PairedDataset(
        caption_ids=tuple(caption_ids),
        image_ids=tuple(image_ids),
        languages=tuple(languages),
        text_vectors=texts.vectors[t_rows] if t_rows else np.empty((0, texts.dim), np.float32),
        image_vectors=images.vectors[i_rows] if i_rows else np.empty((0, images.dim), np.float32),
        split=split,
    )


def l2_normalize_rows(matrix: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Row-wise l2 normalization (optional CLI-level preprocessing)."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return (matrix / np.maximum(norms, eps)).astype(matrix.dtype)
