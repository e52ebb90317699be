"""Shared test constructions.

``lossless_corpus`` builds vectors for which residual product quantization
is exactly lossless: cluster centroids have integer components and
residuals are multiples of 2^-10 in [-0.5, 0.5), so centroid + residual
and its reconstruction are exact in float32, and each subspace sees at
most ``pool_size`` distinct residual sub-vectors.
"""
from dataclasses import dataclass

import numpy as np


@dataclass
class LosslessCorpus:
    ids: np.ndarray
    vectors: np.ndarray  # (n, h) float32
    centroids: np.ndarray  # (ncluster, h) float32, integer-valued
    assignments: np.ndarray  # intended cluster per vector
    residual_pool: np.ndarray  # (pool_size, h) float32, dyadic fractions


def lossless_corpus(n, h, ncluster, pool_size=256, seed=0) -> LosslessCorpus:
    rng = np.random.default_rng(seed)
    centroids = rng.integers(-512, 513, size=(ncluster, h)).astype(np.float32)
    pool = (rng.integers(-512, 512, size=(pool_size, h)) * 2.0**-10).astype(np.float32)
    assignments = np.arange(n) % ncluster
    picks = rng.integers(0, pool_size, size=n)
    vectors = centroids[assignments] + pool[picks]
    # float32 exactness of the construction: subtracting the centroid
    # recovers the pool residual bit for bit
    assert (vectors - centroids[assignments] == pool[picks]).all()
    return LosslessCorpus(
        ids=np.arange(n, dtype=np.int64),
        vectors=vectors,
        centroids=centroids,
        assignments=assignments,
        residual_pool=pool,
    )


def as_id_score_pairs(results):
    return [(r.passage_id, r.score) for r in results]


def as_ids(results):
    return [r.passage_id for r in results]
