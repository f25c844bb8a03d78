from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from core.errors import ConvergenceError, TooFewPoints
from libraries.utils import default_logger, make_rng

PHI_FLOOR = 0.01
_MONOTONE_RTOL = 1e-9


@dataclass(frozen=True)
class KMeansConfig:
    max_iters: int = 100
    n_init: int = 4
    seed: int = 0


@dataclass
class KMeansResult:
    """
    Attributes:
        centroids (np.ndarray): (k, d) cluster centres.
        assignment (np.ndarray): Cluster index per point.
        inertia (float): Sum of squared distances to the assigned centres.
        iterations_run (int): Lloyd iterations of the kept initialisation.
        inertia_history (list): Inertia after every assignment step of the kept initialisation.
    """

    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)


def _squared_distances(points, centroids):
    d2 = (np.sum(points ** 2, axis=1)[:, None] - 2.0 * points @ centroids.T
          + np.sum(centroids ** 2, axis=1)[None, :])
    return np.maximum(d2, 0.0)


def kmeans_plusplus(points, k, rng, init=None) -> np.ndarray:
    """
    k-means++ seeding: each new centre is drawn with probability proportional to squared distance.

    Rows of init, when given, are taken as the first centres (at most k of them) and the draw continues
    from there.
    """

    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    fixed = 0 if init is None else min(k, len(init))
    if fixed:
        centroids[:fixed] = np.asarray(init, dtype=np.float64)[:fixed]
    else:
        centroids[0] = points[rng.integers(n)]
        fixed = 1
    closest = _squared_distances(points, centroids[:fixed]).min(axis=1)

    for i in range(fixed, k):
        total = closest.sum()
        if total <= 0:
            # Every point coincides with a centre already; any pick is as good.
            index = int(rng.integers(n))
        else:
            index = int(rng.choice(n, p=closest / total))
        centroids[i] = points[index]
        closest = np.minimum(closest, _squared_distances(points, centroids[i:i + 1])[:, 0])

    return centroids


def _repair_empty(points, labels, centroids):
    """Moves the point farthest from its centre (among clusters of size > 1) into each empty cluster."""

    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        distances = np.sum((points - centroids[labels]) ** 2, axis=1)
        distances[counts[labels] <= 1] = -1.0
        victim = int(np.argmax(distances))
        counts[labels[victim]] -= 1
        labels[victim] = empty
        counts[empty] = 1
        centroids[empty] = points[victim]
        default_logger.debug(f"\tRepaired empty cluster {empty} with point {victim}")

    return labels, centroids


def _lloyd(points, centroids, max_iters):
    k = centroids.shape[0]
    labels = np.argmin(_squared_distances(points, centroids), axis=1)
    history = []
    iterations = 0

    for iterations in range(1, max_iters + 1):
        labels, centroids = _repair_empty(points, labels, centroids)
        inertia = float(np.sum((points - centroids[labels]) ** 2))
        if history and inertia > history[-1] * (1.0 + _MONOTONE_RTOL) + 1e-12:
            raise ConvergenceError(f"k-means inertia increased from {history[-1]} to {inertia}")
        history.append(inertia)

        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        new_centroids = sums / counts[:, None]
        new_labels = np.argmin(_squared_distances(points, new_centroids), axis=1)

        centroids = new_centroids
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    labels, centroids = _repair_empty(points, labels, centroids)
    inertia = float(np.sum((points - centroids[labels]) ** 2))
    if history and inertia > history[-1] * (1.0 + _MONOTONE_RTOL) + 1e-12:
        raise ConvergenceError(f"k-means inertia increased from {history[-1]} to {inertia}")
    history.append(inertia)

    return KMeansResult(centroids, labels, inertia, iterations, history)


def kmeans(points, k, max_iters=100, seed=0, n_init=4, init=None) -> KMeansResult:
    """
    k-means++ seeded Lloyd iterations, keeping the best of n_init seeded restarts.

    Args:
        points (np.ndarray): (n, d) data.
        k (int): Number of clusters.
        max_iters (int): Lloyd iteration cap per restart.
        seed (int): RNG seed; results are bit-deterministic for a fixed seed.
        n_init (int): Independent restarts.
        init (np.ndarray): Optional (m, d) starting centres shared by every restart; restarts differ only in
            the k - m centres drawn by k-means++.

    Returns:
        KMeansResult: Every cluster nonempty; inertia non-increasing across iterations.

    Raises:
        TooFewPoints: If k < 1 or there are fewer points than clusters.
    """

    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D matrix")
    if k < 1 or points.shape[0] < k:
        raise TooFewPoints(f"Cannot form {k} clusters from {points.shape[0]} points")
    if init is not None and np.shape(init)[1:] != points.shape[1:]:
        raise ValueError(f"init centres have shape {np.shape(init)}, points have width {points.shape[1]}")

    best = None
    for restart in range(max(1, n_init)):
        rng = make_rng(seed, 0xC1, restart)
        result = _lloyd(points, kmeans_plusplus(points, k, rng, init), max_iters)
        if best is None or result.inertia < best.inertia:
            best = result

    return best


def density(member_dists, v, phi_floor=PHI_FLOOR) -> float:
    """phi = max(phi_floor, sum of member-to-centroid distances / V)."""

    if v < 1:
        raise ValueError("A density needs at least one member")
    return max(phi_floor, float(np.sum(member_dists)) / v)
