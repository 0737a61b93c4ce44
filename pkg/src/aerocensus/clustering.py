"""Lloyd's k-means with k-means++ seeding over latent vectors.

Written in-house rather than delegated to a library because the pipeline's
verification contract needs internals libraries do not expose: the
within-cluster sum of squares after every iteration (checked to be monotone
non-increasing), a fixed empty-cluster policy (re-seed at the point farthest
from its centroid), and injectable initial centroids so joint-training
stages and invariance tests can control initialization exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,) ints in [0, k)
    wcss_history: list[float]  # objective after each assignment step
    n_iter: int
    reseeded: int  # empty-cluster re-seed events


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances via the expanded form
    p2 = np.einsum("ij,ij->i", points, points)[:, None]
    c2 = np.einsum("ij,ij->i", centroids, centroids)[None, :]
    d2 = p2 + c2 - 2.0 * points @ centroids.T
    np.maximum(d2, 0.0, out=d2)
    return d2


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each next center drawn ∝ squared distance to the nearest chosen one."""
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = _squared_distances(points, centroids[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centers
            centroids[j:] = points[int(rng.integers(n))]
            break
        probs = d2 / total
        nxt = int(rng.choice(n, p=probs))
        centroids[j] = points[nxt]
        d2 = np.minimum(d2, _squared_distances(points, centroids[j : j + 1]).ravel())
    return centroids


def kmeans_cluster(
    latents: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    init: np.ndarray | None = None,
) -> KMeansResult:
    """Cluster latent vectors; converges when assignments stop changing.

    ``init`` overrides k-means++ seeding with explicit starting centroids.
    An empty cluster is re-seeded at the point currently farthest from its
    assigned centroid, which strictly lowers the objective.
    """
    points = np.asarray(latents, dtype=np.float64)
    if points.ndim != 2:
        raise InputError(f"latents must be 2-D, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise InputError("latents contain non-finite values")
    n = len(points)
    if k < 1 or k > n:
        raise InputError(f"k must be in [1, n={n}], got {k}")
    rng = np.random.default_rng(seed)
    if init is not None:
        centroids = np.array(init, dtype=np.float64, copy=True)
        if centroids.shape != (k, points.shape[1]):
            raise InputError(f"init centroids must have shape ({k}, {points.shape[1]})")
    else:
        centroids = kmeans_plus_plus(points, k, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    wcss_history: list[float] = []
    reseeded = 0
    for iteration in range(max_iter):
        d2 = _squared_distances(points, centroids)
        new_assign = d2.argmin(axis=1)
        wcss = float(d2[np.arange(n), new_assign].sum())

        # fix empty clusters before accepting the step
        counts = np.bincount(new_assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            current = d2[np.arange(n), new_assign].copy()
            for cluster in empty:
                far = int(current.argmax())
                new_assign[far] = cluster
                centroids[cluster] = points[far]
                current[far] = 0.0
                reseeded += 1
            d2 = _squared_distances(points, centroids)
            new_assign = d2.argmin(axis=1)
            wcss = float(d2[np.arange(n), new_assign].sum())

        wcss_history.append(wcss)
        if np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign
        for cluster in range(k):
            members = points[assignments == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        wcss_history=wcss_history,
        n_iter=len(wcss_history),
        reseeded=reseeded,
    )


def assign_to_centroids(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels for new points."""
    return _squared_distances(np.asarray(latents, np.float64), np.asarray(centroids, np.float64)).argmin(axis=1)


def wcss(latents: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    diff = np.asarray(latents, np.float64) - np.asarray(centroids, np.float64)[assignments]
    return float(np.einsum("ij,ij->", diff, diff))
