"""Spherical k-means on unit direction vectors (cosine geometry)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-8


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    """Result of a spherical k-means run.

    ``centers`` has one unit-norm center per row. ``history`` is the
    inertia recorded after each assign/recenter round.
    """

    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    history: tuple[float, ...] = field(default=())

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]


def _as_unit_rows(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ClusteringError(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
    norms = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ClusteringError("all points must have unit norm")
    return pts


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _farthest_point_init(pts: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.integers(pts.shape[0]))
    chosen = [first]
    best_sim = pts @ pts[first]
    for _ in range(1, c):
        # farthest = lowest best-similarity; argmin breaks ties by lowest index
        nxt = int(np.argmin(best_sim))
        chosen.append(nxt)
        best_sim = np.maximum(best_sim, pts @ pts[nxt])
    centers = pts[chosen].copy()
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def _assign(pts: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sims = pts @ centers.T
    labels = np.argmax(sims, axis=1)
    return labels, sims[np.arange(len(pts)), labels]


def _reseed_empty(pts, centers, labels, best):
    """Move the worst-fit point of a multi-member cluster into each empty cluster."""
    c = centers.shape[0]
    for j in range(c):
        counts = np.bincount(labels, minlength=c)
        if counts[j] > 0:
            continue
        movable = counts[labels] > 1
        candidates = np.where(movable, best, np.inf)
        i = int(np.argmin(candidates))
        centers[j] = _normalize(pts[i])
        labels[i] = j
        best[i] = 1.0
    return centers, labels, best


def spherical_kmeans(points, c: int, k_iters: int, seed: int = 0) -> ClusterModel:
    """Cluster unit vectors into `c` directions with exactly `k_iters` rounds.

    Seeding is greedy farthest-point under cosine distance, starting from a
    point drawn with ``numpy.random.default_rng(seed)``.
    """
    pts = _as_unit_rows(points)
    n = pts.shape[0]
    if c < 1 or k_iters < 1:
        raise ClusteringError(f"c and k_iters must be positive, got c={c}, k_iters={k_iters}")
    if c > n:
        raise ClusteringError(f"cannot form {c} clusters from {n} points")

    rng = np.random.default_rng(seed)
    centers = _farthest_point_init(pts, c, rng)
    history = []
    for _ in range(k_iters):
        previous = centers.copy()
        labels, best = _assign(pts, centers)
        centers, labels, best = _reseed_empty(pts, centers, labels, best)
        for j in range(c):
            total = pts[labels == j].sum(axis=0)
            norm = np.linalg.norm(total)
            # a cancelling cluster keeps its previous center
            if norm > 1e-12:
                centers[j] = total / norm
        history.append(float(np.sum(1.0 - np.einsum("ij,ij->i", pts, centers[labels]))))
        if np.array_equal(centers, previous):
            # a fixed point: every remaining round would repeat this one bit for bit
            history.extend([history[-1]] * (k_iters - len(history)))
            break

    labels, best = _assign(pts, centers)
    inertia = float(np.sum(1.0 - best))
    return ClusterModel(centers=centers, assignments=labels, inertia=inertia, history=tuple(history))


def nearest_center(x, model: ClusterModel) -> int:
    if model.centers.size == 0:
        raise ClusteringError("model has no centers")
    x = np.asarray(x, dtype=np.float64).ravel()
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise ClusteringError("query must have unit norm")
    return int(np.argmax(model.centers @ x))
