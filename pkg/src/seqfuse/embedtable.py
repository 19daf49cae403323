"""Frozen per-item text embedding tables and their binary interchange format.

Layout of `<path>.bin` (24-byte header, little endian):
    bytes 0..3   magic "ITEB"
    bytes 4..7   u32 version = 1
    bytes 8..11  u32 count
    bytes 12..15 u32 dim
    byte  16     u8  normalized_flag
    bytes 17..23 zero padding
    bytes 24..   count*dim float32 values, row-major

`<path>.ids.tsv` holds one opaque item id per line; line r corresponds to
matrix row r. Tables are immutable once loaded; the engine never rescales
or re-normalizes them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .corpus import Vocab
from .errors import DataError

MAGIC = b"ITEB"
VERSION = 1
HEADER = struct.Struct("<4sIIIB7x")
assert HEADER.size == 24

NORM_TOLERANCE = 1e-3  # allowed |row norm - 1| under normalized_flag


@dataclass
class TextEmbeddingTable:
    ids: List[str]
    vectors: np.ndarray  # (count, dim) float32
    normalized: bool

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def validate(self) -> None:
        if self.vectors.ndim != 2:
            raise DataError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        if self.vectors.shape[0] != len(self.ids):
            raise DataError(f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows")
        if self.count == 0 or self.dim == 0:
            raise DataError("table must have at least one row and one dimension")
        if len(set(self.ids)) != len(self.ids):
            dup = _first_duplicate(self.ids)
            raise DataError(f"duplicate item id {dup!r} in table")
        if self.vectors.dtype != np.float32:
            raise DataError(f"vectors must be float32, got {self.vectors.dtype}")
        if self.normalized:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
            if bad.size:
                r = int(bad[0])
                raise DataError(
                    f"normalized_flag set but row {r} (id {self.ids[r]!r}) has L2 norm {norms[r]:.6f}"
                )


def _first_duplicate(ids: Sequence[str]) -> str:
    seen = set()
    for s in ids:
        if s in seen:
            return s
        seen.add(s)
    return ""


def write_table(table: TextEmbeddingTable, path: str) -> None:
    """Emit `<path>.bin` and `<path>.ids.tsv`; read-back is bit-exact."""
    table.validate()
    header = HEADER.pack(MAGIC, VERSION, table.count, table.dim, 1 if table.normalized else 0)
    payload = np.ascontiguousarray(table.vectors, dtype="<f4").tobytes()
    with open(path + ".bin", "wb") as fh:
        fh.write(header)
        fh.write(payload)
    with open(path + ".ids.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for opaque in table.ids:
            fh.write(opaque + "\n")


def load_table(path: str) -> TextEmbeddingTable:
    """Load and validate a table written by write_table (or a compatible tool)."""
    bin_path = path + ".bin"
    ids_path = path + ".ids.tsv"
    with open(bin_path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size or raw[:4] != MAGIC:
        raise DataError(f"{bin_path}: not an embedding table (bad magic)")
    magic, version, count, dim, normalized_byte = HEADER.unpack_from(raw)
    if version != VERSION:
        raise DataError(f"{bin_path}: unsupported version {version}")
    expected = HEADER.size + 4 * count * dim
    if len(raw) != expected:
        raise DataError(f"{bin_path}: expected {expected} bytes for count={count} dim={dim}, found {len(raw)}")
    vectors = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(count, dim).copy()

    ids: List[str] = []
    with open(ids_path, "r", encoding="utf-8") as fh:
        for line in fh:
            ids.append(line.rstrip("\n"))
    if ids and ids[-1] == "":
        ids.pop()
    if len(ids) != count:
        raise DataError(f"{ids_path}: {len(ids)} ids but {bin_path} declares count={count}")

    table = TextEmbeddingTable(ids=ids, vectors=vectors, normalized=bool(normalized_byte))
    table.validate()
    return table


def random_table(ids: Sequence[str], dim: int, seed: int, normalized: bool = False) -> TextEmbeddingTable:
    """Gaussian stand-in table for tests and synthetic runs; deterministic in seed."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate item id {_first_duplicate(ids)!r}")
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(ids), dim))
    if normalized:
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    table = TextEmbeddingTable(ids=ids, vectors=vectors.astype(np.float32), normalized=normalized)
    table.validate()
    return table


def cluster_onehot_table(
    ids: Sequence[str], clusters: np.ndarray, dim: int, noise_sigma: float, seed: int
) -> TextEmbeddingTable:
    """One-hot cluster signal plus Gaussian noise; carries real semantic
    structure for synthetic datasets, the way metadata embeddings do."""
    ids = list(ids)
    n_clusters = int(clusters.max()) + 1 if len(clusters) else 0
    if dim < n_clusters:
        raise DataError(f"dim {dim} too small for {n_clusters} clusters")
    if len(ids) != len(clusters):
        raise DataError(f"{len(ids)} ids but {len(clusters)} cluster assignments")
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(ids), dim)) * noise_sigma
    vectors[np.arange(len(ids)), clusters] += 1.0
    table = TextEmbeddingTable(ids=ids, vectors=vectors.astype(np.float32), normalized=False)
    table.validate()
    return table


def align(table: TextEmbeddingTable, vocab: Vocab) -> np.ndarray:
    """Reorder table rows into vocab index order; ids missing from the table
    are an error (reported up to the first 10)."""
    row_of = {opaque: r for r, opaque in enumerate(table.ids)}
    missing = [opaque for opaque in vocab.items if opaque not in row_of]
    if missing:
        shown = ", ".join(repr(m) for m in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DataError(f"embedding table is missing {len(missing)} vocab item(s): {shown}{more}")
    rows = np.fromiter((row_of[opaque] for opaque in vocab.items), dtype=np.int64, count=vocab.n_items)
    return table.vectors[rows]
