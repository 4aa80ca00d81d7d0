"""
K-means over the intermediate-variable space and nearest-centroid utilities.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    seed: int
    n_iter: int = 0
    inertia_history: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"points must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (n_points, n_centroids)."""
    diff = points[:, np.newaxis, :] - centroids[np.newaxis, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest_centroids(points: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the nearest centroid per point (ties -> lowest index) and its squared distance."""
    d2 = squared_distances(points, centroids)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(points, points[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # Remaining points coincide with chosen centroids
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(points, points[[idx]]).ravel())
    return points[chosen].copy()


def _reseed_empty(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, d2: np.ndarray) -> int:
    """Move each empty centroid onto the point farthest from its centroid. Returns the count moved."""
    sizes = np.bincount(labels, minlength=centroids.shape[0])
    empty = np.flatnonzero(sizes == 0)
    if empty.size == 0:
        return 0
    d2 = d2.copy()
    for j in empty:
        far = int(np.argmax(d2))
        centroids[j] = points[far]
        labels[far] = j
        d2[far] = -1.0
    return int(empty.size)


def kmeans(
    points,
    k: int,
    seed: int = 0,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClusterModel:
    """
    Lloyd's algorithm from k-means++ initialization.

    Args:
        points: (n, l) array of finite points
        k: Number of clusters, 1 <= k <= n
        seed: Seed for the initialization stream
        tol: Convergence threshold on the largest centroid shift
        max_iter: Iteration cap

    Returns:
        ClusterModel, without empty clusters when there are k distinct points;
        inertia_history holds the inertia after each assignment step
    """
    points = _as_points(points)
    n = points.shape[0]
    if not (1 <= int(k) <= n):
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    k = int(k)

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(points, k, rng)
    history = []
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        labels, d2 = nearest_centroids(points, centroids)
        history.append(float(d2.sum()))

        updated = np.empty_like(centroids)
        sizes = np.bincount(labels, minlength=k)
        for j in range(k):
            updated[j] = points[labels == j].mean(axis=0) if sizes[j] else centroids[j]
        moved = _reseed_empty(points, updated, labels, d2)
        if moved:
            logger.debug(f"Reseeded {moved} empty cluster(s) at iteration {n_iter}")

        shift = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        if shift < tol and not moved:
            break

    labels, d2 = nearest_centroids(points, centroids)
    for _ in range(k):
        if not _reseed_empty(points, centroids, labels, d2):
            break
        labels, d2 = nearest_centroids(points, centroids)

    centroids.setflags(write=False)
    labels.setflags(write=False)
    return ClusterModel(
        centroids=centroids,
        assignments=labels,
        inertia=float(d2.sum()),
        seed=seed,
        n_iter=n_iter,
        inertia_history=tuple(history),
    )


def match_clusters(cf: Sequence, cg: Sequence) -> np.ndarray:
    """
    Map each f-centroid to its nearest g-centroid (many-to-one allowed, ties -> lowest index).
    """
    cf = _as_points(cf)
    cg = _as_points(cg)
    if cf.shape[1] != cg.shape[1]:
        raise ValueError(f"centroid dimension mismatch: {cf.shape[1]} vs {cg.shape[1]}")
    mapping, _ = nearest_centroids(cf, cg)
    return mapping


def assign_clusters(points, cm: ClusterModel) -> np.ndarray:
    """Batch nearest-centroid routing."""
    points = _as_points(points)
    if points.shape[1] != cm.centroids.shape[1]:
        raise ValueError(
            f"dimension mismatch: points have {points.shape[1]}, centroids {cm.centroids.shape[1]}"
        )
    labels, _ = nearest_centroids(points, cm.centroids)
    return labels


def assign_cluster(y_hat, cm: ClusterModel) -> int:
    y_hat = np.asarray(y_hat, dtype=float).reshape(1, -1)
    return int(assign_clusters(y_hat, cm)[0])
