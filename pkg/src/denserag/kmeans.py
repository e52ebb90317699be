"""Seeded Lloyd's k-means with k-means++ initialization.

Internals run in float64 so the recorded objective history (mean squared
distance of each point to its assigned centroid, measured after every
centroid update) is reliably non-increasing. Centroids are returned as
float32, matching on-disk vector precision.

Empty clusters are repaired deterministically: each empty cluster takes
the point currently farthest from its assigned centroid, never draining a
cluster below one member.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, dim) float32
    assignments: np.ndarray  # (n,) int64
    objective_history: list[float] = field(default_factory=list)
    n_iters: int = 0


def _squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2; clamp tiny negatives from cancellation
    d = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    np.maximum(d, 0.0, out=d)
    return d


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining distance mass is zero (duplicates); any point does
            idx = rng.integers(n)
        centroids[j] = x[idx]
        np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1), out=d2)
    return centroids


def _repair_empty_clusters(
    d2: np.ndarray, assignments: np.ndarray, k: int
) -> np.ndarray:
    """Assign to each empty cluster the farthest point from its centroid.

    Points are drawn one at a time from clusters that keep >= 2 members;
    ties break on the lowest point index.
    """
    counts = np.bincount(assignments, minlength=k)
    per_point = d2[np.arange(len(assignments)), assignments]
    for j in np.flatnonzero(counts == 0):
        eligible = counts[assignments] >= 2
        if not eligible.any():
            continue
        masked = np.where(eligible, per_point, -np.inf)
        victim = int(np.argmax(masked))
        counts[assignments[victim]] -= 1
        counts[j] += 1
        assignments[victim] = j
        per_point[victim] = 0.0
    return assignments


def kmeans(
    samples: np.ndarray, k: int, seed: int, max_iters: int = 25
) -> KMeansResult:
    """Cluster ``samples`` into k centroids.

    Runs until the assignment reaches a fixpoint or ``max_iters`` passes.
    Deterministic for a fixed (samples, k, seed).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"samples must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if n < k:
        raise ConfigError(f"need at least k={k} samples, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(x, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    iters = 0

    for _ in range(max_iters):
        d2 = _squared_distances(x, centroids)
        new_assignments = np.argmin(d2, axis=1)
        new_assignments = _repair_empty_clusters(d2, new_assignments, k)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        iters += 1
        for j in range(k):
            members = x[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        final_d2 = _squared_distances(x, centroids)
        history.append(
            float(final_d2[np.arange(n), assignments].mean())
        )

    return KMeansResult(
        centroids=centroids.astype(np.float32),
        assignments=assignments,
        objective_history=history,
        n_iters=iters,
    )
