"""In-memory IVFPQ index and the Flat exact-search oracle.

The index couples a coarse quantizer (k-means centroids, one inverted
list each) with per-subspace product-quantization codebooks. A vector is
stored as its coarse cluster id plus the PQ code of its residual
(vector minus coarse centroid), so the coarse component of every
inner-product score stays exact and only the residual part is lossy.

Cluster assignment uses maximum inner product against the coarse
centroids, matching the similarity the index serves. Scores are
accumulated in float64; vectors rest in float32. Result ordering is
always (score descending, passage id ascending).

Index file layout (little-endian), version 1:

    magic "CDSIVFPQ" | u32 version | u32 h | u32 ncluster | u32 M
    | u32 nbits | u64 N | i64 train_seed
    | f32 coarse centroids (ncluster x h, row-major)
    | f32 codebooks (M x 2^nbits x h/M)
    | per cluster: u64 entry count, entries as (u64 id, M code bytes)
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    ConfigError,
    DataError,
    FormatError,
    TruncatedError,
)
from .kmeans import kmeans

INDEX_MAGIC = b"CDSIVFPQ"
INDEX_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQq")

STAGE_ANN = "ann"
STAGE_EXACT = "exact"
STAGE_LM_RERANK = "lm_rerank"
STAGE_ORACLE = "oracle"


@dataclass(frozen=True)
class ScoredPassage:
    """A passage id with its score and the stage that produced it."""

    passage_id: int
    score: float
    stage: str


@dataclass
class SearchParams:
    """Knobs for the two-stage search.

    K is the stage-one candidate count, k the final passage count,
    nprobe the number of coarse clusters scanned, k_rerank the optional
    count kept by a third reranking stage.
    """

    K: int = 1000
    k: int = 10
    nprobe: int = 8
    k_rerank: int | None = None

    def validate(self, ncluster: int | None = None) -> None:
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.k <= self.K:
            raise ConfigError(f"need 1 <= k <= K, got k={self.k}, K={self.K}")
        if self.nprobe < 1:
            raise ConfigError(f"nprobe must be >= 1, got {self.nprobe}")
        if ncluster is not None and self.nprobe > ncluster:
            raise ConfigError(
                f"nprobe={self.nprobe} exceeds ncluster={ncluster}"
            )
        if self.k_rerank is not None and not 1 <= self.k_rerank <= self.K:
            raise ConfigError(
                f"need 1 <= k_rerank <= K, got k_rerank={self.k_rerank}, K={self.K}"
            )


def default_ncluster(n_vectors: int) -> int:
    """Suggested cluster count: sqrt of the corpus size."""
    return max(1, round(math.sqrt(n_vectors)))


def default_train_count(n_vectors: int) -> int:
    """Suggested quantizer training sample count: 5% of the corpus."""
    return max(1, math.ceil(0.05 * n_vectors))


def top_sorted(ids: np.ndarray, scores: np.ndarray, K: int, stage: str) -> list[ScoredPassage]:
    """Top-K entries ordered by (score desc, id asc)."""
    order = np.lexsort((ids, -scores))[:K]
    return [
        ScoredPassage(passage_id=int(ids[i]), score=float(scores[i]), stage=stage)
        for i in order
    ]


class CoarseQuantizer:
    """Centroids partitioning the vector space; one inverted list each."""

    def __init__(self, centroids: np.ndarray):
        centroids = np.ascontiguousarray(centroids, dtype=np.float32)
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise ConfigError(f"centroids must be (ncluster, h), got {centroids.shape}")
        self.centroids = centroids

    @property
    def ncluster(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def centroid_scores(self, query: np.ndarray) -> np.ndarray:
        """Inner product of the query with every centroid (float64)."""
        return self.centroids @ query.astype(np.float64)

    def assign(self, vectors: np.ndarray) -> np.ndarray:
        """Max-inner-product cluster per vector; ties go to the lowest index."""
        scores = vectors.astype(np.float64) @ self.centroids.T.astype(np.float64)
        return np.argmax(scores, axis=1)


class PqCodebook:
    """Per-subspace codebooks: M tables of 2^nbits codewords of dim h/M."""

    def __init__(self, codebooks: np.ndarray, nbits: int = 8):
        codebooks = np.ascontiguousarray(codebooks, dtype=np.float32)
        if codebooks.ndim != 3:
            raise ConfigError(
                f"codebooks must be (M, 2^nbits, sub_dim), got {codebooks.shape}"
            )
        if codebooks.shape[1] != 2**nbits:
            raise ConfigError(
                f"codebooks have {codebooks.shape[1]} codewords, expected {2**nbits}"
            )
        self.codebooks = codebooks
        self.nbits = nbits

    @property
    def M(self) -> int:
        return self.codebooks.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def dim(self) -> int:
        return self.M * self.sub_dim

    def encode(self, residuals: np.ndarray) -> np.ndarray:
        """Nearest codeword (squared L2) per subspace; returns (n, M) uint8."""
        residuals = np.asarray(residuals, dtype=np.float32)
        n = residuals.shape[0]
        codes = np.empty((n, self.M), dtype=np.uint8)
        for m in range(self.M):
            sub = residuals[:, m * self.sub_dim : (m + 1) * self.sub_dim].astype(np.float64)
            cb = self.codebooks[m].astype(np.float64)
            d = (
                np.einsum("ij,ij->i", sub, sub)[:, None]
                - 2.0 * (sub @ cb.T)
                + np.einsum("ij,ij->i", cb, cb)[None, :]
            )
            codes[:, m] = np.argmin(d, axis=1)
        return codes

    def decode(self, codes: np.ndarray) -> np.ndarray:
        """Reconstruct residuals from codes; returns (n, dim) float32."""
        codes = np.asarray(codes)
        return np.concatenate(
            [self.codebooks[m][codes[:, m]] for m in range(self.M)], axis=1
        )


def train_coarse(
    samples: np.ndarray, ncluster: int, seed: int, max_iters: int = 25
) -> CoarseQuantizer:
    """Train the coarse quantizer with seeded k-means."""
    return CoarseQuantizer(kmeans(samples, ncluster, seed=seed, max_iters=max_iters).centroids)


def train_pq(
    samples: np.ndarray,
    coarse: CoarseQuantizer,
    M: int,
    nbits: int = 8,
    seed: int = 0,
    max_iters: int = 25,
) -> PqCodebook:
    """Train per-subspace codebooks on the samples' coarse residuals."""
    samples = np.ascontiguousarray(samples, dtype=np.float32)
    h = samples.shape[1]
    if h != coarse.dim:
        raise ConfigError(f"sample dim {h} != coarse dim {coarse.dim}")
    if h % M != 0:
        raise ConfigError(f"M={M} does not divide vector dim h={h}")
    ncodes = 2**nbits
    residuals = samples - coarse.centroids[coarse.assign(samples)]
    if len(residuals) < ncodes:
        warnings.warn(
            f"only {len(residuals)} training residuals for {ncodes} codewords; "
            "codebooks will contain duplicates",
            stacklevel=2,
        )
        residuals = np.resize(residuals, (ncodes, h))
    sub_dim = h // M
    codebooks = np.empty((M, ncodes, sub_dim), dtype=np.float32)
    sparse_subspaces = []
    for m in range(M):
        sub = residuals[:, m * sub_dim : (m + 1) * sub_dim]
        if len(np.unique(sub, axis=0)) < ncodes:
            sparse_subspaces.append(m)
        codebooks[m] = kmeans(sub, ncodes, seed=seed + m, max_iters=max_iters).centroids
    if sparse_subspaces:
        warnings.warn(
            f"subspaces {sparse_subspaces} have fewer than {ncodes} distinct "
            "residual sub-vectors; duplicate codewords allowed",
            stacklevel=2,
        )
    return PqCodebook(codebooks, nbits=nbits)


def adc_tables(query: np.ndarray, pq: PqCodebook) -> np.ndarray:
    """Per-subspace lookup tables of partial inner products.

    table[m][c] is the inner product of the query's m-th sub-vector with
    codeword c of codebook m. Returned as (M, 2^nbits) float64.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (pq.dim,):
        raise ConfigError(f"query shape {query.shape} != ({pq.dim},)")
    sub_dim = pq.sub_dim
    return np.stack(
        [
            pq.codebooks[m].astype(np.float64)
            @ query[m * sub_dim : (m + 1) * sub_dim]
            for m in range(pq.M)
        ]
    )


class IvfPqIndex:
    """Coarse centroids + PQ codebooks + inverted lists of quantized codes.

    Single writer: train/add from one thread, then treat as immutable;
    searches allocate only per-query scratch.
    """

    def __init__(self, coarse: CoarseQuantizer, pq: PqCodebook, train_seed: int = 0):
        if pq.dim != coarse.dim:
            raise ConfigError(f"pq dim {pq.dim} != coarse dim {coarse.dim}")
        self.coarse = coarse
        self.pq = pq
        self.train_seed = train_seed
        self._ids: list[np.ndarray] = [
            np.empty(0, dtype=np.int64) for _ in range(coarse.ncluster)
        ]
        self._codes: list[np.ndarray] = [
            np.empty((0, pq.M), dtype=np.uint8) for _ in range(coarse.ncluster)
        ]
        self._id_set: set[int] = set()

    @classmethod
    def train(
        cls,
        samples: np.ndarray,
        ncluster: int,
        M: int,
        nbits: int = 8,
        seed: int = 0,
        max_iters: int = 25,
    ) -> "IvfPqIndex":
        """Train both quantizers on ``samples`` and return an empty index."""
        coarse = train_coarse(samples, ncluster, seed=seed, max_iters=max_iters)
        pq = train_pq(samples, coarse, M=M, nbits=nbits, seed=seed + 1, max_iters=max_iters)
        return cls(coarse, pq, train_seed=seed)

    @property
    def dim(self) -> int:
        return self.coarse.dim

    @property
    def ncluster(self) -> int:
        return self.coarse.ncluster

    @property
    def n_total(self) -> int:
        return len(self._id_set)

    def __len__(self) -> int:
        return self.n_total

    def add(self, ids, vectors) -> "IvfPqIndex":
        """Quantize and store vectors under the given passage ids."""
        ids = np.asarray(ids, dtype=np.int64)
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if len(ids) != len(vectors):
            raise DataError(f"{len(ids)} ids for {len(vectors)} vectors")
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ConfigError(f"vectors shape {vectors.shape}, expected (n, {self.dim})")
        unique, counts = np.unique(ids, return_counts=True)
        if (counts > 1).any():
            raise DataError(f"duplicate passage id in batch: {int(unique[counts > 1][0])}")
        already = [int(i) for i in ids if int(i) in self._id_set]
        if already:
            raise DataError(f"passage id already indexed: {already[0]}")

        assignments = self.coarse.assign(vectors)
        residuals = vectors - self.coarse.centroids[assignments]
        codes = self.pq.encode(residuals)
        for j in np.unique(assignments):
            mask = assignments == j
            self._ids[j] = np.concatenate([self._ids[j], ids[mask]])
            self._codes[j] = np.concatenate([self._codes[j], codes[mask]])
        self._id_set.update(int(i) for i in ids)
        return self

    def list_sizes(self) -> list[int]:
        return [len(ids) for ids in self._ids]

    def search(
        self,
        query: np.ndarray,
        params: SearchParams,
        collect_scanned: bool = False,
    ):
        """ANN search: probe nprobe lists, score by ADC, return top-K.

        Approximate score of an entry in cluster j is
        (query . centroid_j) + sum_m table[m][code_m]. With
        ``collect_scanned`` also returns the set of passage ids whose
        codes were scanned.
        """
        params.validate(self.ncluster)
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise ConfigError(f"query shape {query.shape} != ({self.dim},)")

        centroid_scores = self.coarse.centroid_scores(query)
        probe_order = np.lexsort((np.arange(self.ncluster), -centroid_scores))
        probed = probe_order[: params.nprobe]

        tables = adc_tables(query, self.pq)
        m_range = np.arange(self.pq.M)
        id_parts: list[np.ndarray] = []
        score_parts: list[np.ndarray] = []
        for j in probed:
            if not len(self._ids[j]):
                continue
            contrib = tables[m_range[None, :], self._codes[j]].sum(axis=1)
            id_parts.append(self._ids[j])
            score_parts.append(centroid_scores[j] + contrib)

        if id_parts:
            all_ids = np.concatenate(id_parts)
            all_scores = np.concatenate(score_parts)
            results = top_sorted(all_ids, all_scores, params.K, STAGE_ANN)
        else:
            all_ids = np.empty(0, dtype=np.int64)
            results = []
        if collect_scanned:
            return results, {int(i) for i in all_ids}
        return results


def flat_search(ids, vectors, query: np.ndarray, K: int) -> list[ScoredPassage]:
    """Exhaustive exact inner-product search: the deterministic oracle."""
    ids = np.asarray(ids, dtype=np.int64)
    vectors = np.asarray(vectors, dtype=np.float32)
    query = np.asarray(query, dtype=np.float32)
    if len(ids) != len(vectors):
        raise DataError(f"{len(ids)} ids for {len(vectors)} vectors")
    if len(ids) == 0:
        return []
    if vectors.shape[1] != query.shape[0]:
        raise ConfigError(
            f"vector dim {vectors.shape[1]} != query dim {query.shape[0]}"
        )
    scores = vectors @ query.astype(np.float64)
    return top_sorted(ids, scores, K, STAGE_EXACT)


def serialize(index: IvfPqIndex) -> bytes:
    """Encode the index in the versioned binary layout."""
    parts = [
        _HEADER.pack(
            INDEX_MAGIC,
            INDEX_VERSION,
            index.dim,
            index.ncluster,
            index.pq.M,
            index.pq.nbits,
            index.n_total,
            index.train_seed,
        ),
        index.coarse.centroids.astype("<f4").tobytes(),
        index.pq.codebooks.astype("<f4").tobytes(),
    ]
    entry_dtype = np.dtype([("id", "<u8"), ("code", "u1", (index.pq.M,))])
    for j in range(index.ncluster):
        ids = index._ids[j]
        parts.append(struct.pack("<Q", len(ids)))
        entries = np.empty(len(ids), dtype=entry_dtype)
        entries["id"] = ids.astype(np.uint64)
        entries["code"] = index._codes[j]
        parts.append(entries.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, nbytes: int) -> bytes:
        if self.offset + nbytes > len(self.data):
            raise TruncatedError(
                f"index data truncated: wanted {nbytes} bytes at offset "
                f"{self.offset}, have {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset : self.offset + nbytes]
        self.offset += nbytes
        return chunk


def deserialize(data: bytes) -> IvfPqIndex:
    """Decode an index from bytes, validating magic, version and length."""
    reader = _Reader(data)
    header = reader.take(_HEADER.size)
    magic, version, h, ncluster, M, nbits, n_total, train_seed = _HEADER.unpack(header)
    if magic != INDEX_MAGIC:
        raise BadMagicError(INDEX_MAGIC, magic)
    if version != INDEX_VERSION:
        raise BadVersionError(INDEX_VERSION, version)
    if M == 0 or h % M != 0:
        raise FormatError(f"inconsistent header: M={M} does not divide h={h}")
    sub_dim = h // M

    coarse = CoarseQuantizer(
        np.frombuffer(reader.take(ncluster * h * 4), dtype="<f4").reshape(ncluster, h).copy()
    )
    codebooks = (
        np.frombuffer(reader.take(M * 2**nbits * sub_dim * 4), dtype="<f4")
        .reshape(M, 2**nbits, sub_dim)
        .copy()
    )
    index = IvfPqIndex(coarse, PqCodebook(codebooks, nbits=nbits), train_seed=train_seed)

    entry_dtype = np.dtype([("id", "<u8"), ("code", "u1", (M,))])
    total = 0
    for j in range(ncluster):
        (count,) = struct.unpack("<Q", reader.take(8))
        entries = np.frombuffer(reader.take(count * entry_dtype.itemsize), dtype=entry_dtype)
        index._ids[j] = entries["id"].astype(np.int64)
        index._codes[j] = entries["code"].reshape(count, M).copy()
        index._id_set.update(int(i) for i in index._ids[j])
        total += count
    if total != n_total:
        raise TruncatedError(
            f"index data inconsistent: header claims {n_total} entries, found {total}"
        )
    if reader.offset != len(data):
        raise TruncatedError(
            f"trailing bytes after index data: {len(data) - reader.offset}"
        )
    return index


def save_index(index: IvfPqIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(index))


def load_index(path) -> IvfPqIndex:
    with open(path, "rb") as f:
        return deserialize(f.read())
