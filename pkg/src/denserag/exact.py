"""Disk-resident full-precision embedding store for second-stage exact rerank.

Rows are float32, little-endian, row-major, read on demand by offset
(os.pread, so a single open store is safe for concurrent point reads).
The id table lives in memory for O(1) id -> row lookup.

Store file layout (little-endian), version 1:

    magic "CDSEXACT" | u32 version | u32 dim | u64 count
    | u64 id table (count entries)
    | f32 rows (count x dim, in id-table order)
"""
from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

from .ann import STAGE_EXACT, ScoredPassage, top_sorted
from .errors import (
    BadMagicError,
    BadVersionError,
    ConfigError,
    DataError,
    TruncatedError,
    UnknownIdError,
)

STORE_MAGIC = b"CDSEXACT"
STORE_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


class ExactStore:
    """Read handle over a written store file. Immutable once written."""

    def __init__(self, path):
        self.path = str(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        try:
            file_size = os.fstat(self._fd).st_size
            header = self._pread(_HEADER.size, 0)
            magic, version, dim, count = _HEADER.unpack(header)
            if magic != STORE_MAGIC:
                raise BadMagicError(STORE_MAGIC, magic)
            if version != STORE_VERSION:
                raise BadVersionError(STORE_VERSION, version)
            self.dim = dim
            self.count = count
            expected = _HEADER.size + count * 8 + count * dim * 4
            if file_size != expected:
                raise TruncatedError(
                    f"store file is {file_size} bytes, header implies {expected}"
                )
            id_bytes = self._pread(count * 8, _HEADER.size)
            self.ids = np.frombuffer(id_bytes, dtype="<u8").astype(np.int64)
            self._row_of = {int(pid): row for row, pid in enumerate(self.ids)}
            self._rows_offset = _HEADER.size + count * 8
        except Exception:
            os.close(self._fd)
            self._fd = -1
            raise

    def _pread(self, nbytes: int, offset: int) -> bytes:
        data = os.pread(self._fd, nbytes, offset)
        if len(data) != nbytes:
            raise TruncatedError(
                f"store file truncated: wanted {nbytes} bytes at offset {offset}, "
                f"got {len(data)}"
            )
        return data

    def __contains__(self, passage_id: int) -> bool:
        return int(passage_id) in self._row_of

    def read_rows(self, ids: Sequence[int]) -> np.ndarray:
        """Rows for the requested ids, in request order; repeats allowed."""
        out = np.empty((len(ids), self.dim), dtype=np.float32)
        row_bytes = self.dim * 4
        for i, pid in enumerate(ids):
            row = self._row_of.get(int(pid))
            if row is None:
                raise UnknownIdError(int(pid))
            data = self._pread(row_bytes, self._rows_offset + row * row_bytes)
            out[i] = np.frombuffer(data, dtype="<f4")
        return out

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> "ExactStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_store(ids, vectors, path) -> ExactStore:
    """Write a store file and return an open handle on it."""
    ids = np.asarray(ids, dtype=np.int64)
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if len(ids) != len(vectors):
        raise DataError(f"{len(ids)} ids for {len(vectors)} vectors")
    if vectors.ndim != 2:
        raise ConfigError(f"vectors must be (n, dim), got shape {vectors.shape}")
    unique, counts = np.unique(ids, return_counts=True)
    if (counts > 1).any():
        raise DataError(f"duplicate passage id: {int(unique[counts > 1][0])}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, vectors.shape[1], len(ids)))
        f.write(ids.astype("<u8").tobytes())
        f.write(vectors.astype("<f4").tobytes())
    return ExactStore(path)


class OnTheFlyStore:
    """Store adapter that recomputes rows with the exact-role encoder.

    Matches the disk path bit for bit when the encoder reproduces the
    vectors the disk store was written from. Trades latency for disk.
    """

    def __init__(self, encoder, texts):
        """``texts`` maps passage_id -> passage text."""
        self._encoder = encoder
        self._texts = dict(texts)
        self.dim = encoder.spec.dim

    def __contains__(self, passage_id: int) -> bool:
        return int(passage_id) in self._texts

    def read_rows(self, ids: Sequence[int]) -> np.ndarray:
        missing = [int(pid) for pid in ids if int(pid) not in self._texts]
        if missing:
            raise UnknownIdError(missing[0])
        return self._encoder.encode([self._texts[int(pid)] for pid in ids])


def exact_rerank(
    store, query: np.ndarray, candidates: Sequence[int], k: int
) -> list[ScoredPassage]:
    """Exact inner-product rerank of candidate ids against the store.

    Returns min(k, len(candidates)) passages ordered (score desc, id asc).
    ``store`` is anything with ``dim`` and ``read_rows``.
    """
    if not len(candidates):
        raise ConfigError("exact_rerank requires a nonempty candidate list")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (store.dim,):
        raise ConfigError(f"query shape {query.shape} != store dim ({store.dim},)")
    rows = store.read_rows(candidates)
    scores = rows @ query.astype(np.float64)
    ids = np.asarray([int(c) for c in candidates], dtype=np.int64)
    return top_sorted(ids, scores, k, STAGE_EXACT)
