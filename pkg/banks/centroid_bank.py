from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from cluster.kmeans import PHI_FLOOR, KMeansConfig, density, kmeans
from core.errors import TooFewPoints
from libraries.io_utils import load_json, load_tensor, save_json, save_tensor
from libraries.utils import default_logger


@dataclass
class CentroidBank:
    """
    Attributes:
        centroids (np.ndarray): (N_c, d2) unit-norm centroids.
        phi (np.ndarray): Per-centroid density, every entry >= phi_floor.
        assignment (dict): sample_id -> centroid index.
        member_counts (np.ndarray): V per centroid.
        phi_floor (float): Lower clamp on phi.
    """

    centroids: np.ndarray
    phi: np.ndarray
    assignment: dict = field(default_factory=dict)
    member_counts: np.ndarray | None = None
    phi_floor: float = PHI_FLOOR

    @property
    def n_c(self) -> int:
        return int(self.centroids.shape[0])

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        save_tensor(self.centroids, os.path.join(out_dir, "centroids.owt"))
        save_tensor(self.phi, os.path.join(out_dir, "phi.owt"))
        save_json({"assignment": self.assignment,
                   "member_counts": [int(c) for c in self.member_counts],
                   "phi_floor": self.phi_floor},
                  os.path.join(out_dir, "centroid_bank.json"))

    @classmethod
    def load(cls, out_dir) -> "CentroidBank":
        index = load_json(os.path.join(out_dir, "centroid_bank.json"))
        return cls(centroids=load_tensor(os.path.join(out_dir, "centroids.owt")).astype(np.float64),
                   phi=load_tensor(os.path.join(out_dir, "phi.owt")).astype(np.float64),
                   assignment={k: int(v) for k, v in index["assignment"].items()},
                   member_counts=np.asarray(index["member_counts"], dtype=np.int64),
                   phi_floor=index["phi_floor"])


def _normalize_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def rebuild_centroids(reps, n_c, kmeans_cfg: KMeansConfig | None = None, sample_ids=None,
                      phi_floor=PHI_FLOOR) -> CentroidBank:
    """
    Clusters the training representations into N_c semantic centroids.

    Centroids are unit-normalised after k-means, samples are re-assigned to their nearest normalised
    centroid and phi is the mean member distance to it, clamped at phi_floor (a centroid left
    without members gets the floor).

    Args:
        reps (np.ndarray): (n, d2) momentum representations of every training sample.
        n_c (int): Number of centroids.
        kmeans_cfg (KMeansConfig): Iterations, restarts and seed.
        sample_ids (list): Ids aligned with reps; row indices are used when omitted.
        phi_floor (float): Density clamp.

    Raises:
        TooFewPoints: If there are fewer representations than centroids.
    """

    kmeans_cfg = kmeans_cfg or KMeansConfig()
    reps = np.asarray(reps, dtype=np.float64)
    if reps.shape[0] < n_c:
        raise TooFewPoints(f"Cannot build {n_c} centroids from {reps.shape[0]} representations")
    sample_ids = list(range(reps.shape[0])) if sample_ids is None else list(sample_ids)

    result = kmeans(reps, n_c, max_iters=kmeans_cfg.max_iters, seed=kmeans_cfg.seed, n_init=kmeans_cfg.n_init)
    centroids = _normalize_rows(result.centroids)

    d2 = np.maximum(np.sum(reps ** 2, axis=1)[:, None] - 2.0 * reps @ centroids.T
                    + np.sum(centroids ** 2, axis=1)[None, :], 0.0)
    labels = np.argmin(d2, axis=1)
    distances = np.linalg.norm(reps - centroids[labels], axis=1)
    counts = np.bincount(labels, minlength=n_c)

    phi = np.full(n_c, phi_floor, dtype=np.float64)
    for i in np.flatnonzero(counts):
        phi[i] = density(distances[labels == i], counts[i], phi_floor)

    clamped = int(np.sum(phi <= phi_floor))
    if clamped:
        default_logger.warning(f"\t{clamped} of {n_c} centroid densities clamped to {phi_floor}")
    default_logger.info(f"\tCentroid bank: {n_c} centroids over {reps.shape[0]} representations, "
                        f"k-means inertia {result.inertia:.4f}")

    return CentroidBank(centroids=centroids, phi=phi,
                        assignment={sid: int(c) for sid, c in zip(sample_ids, labels)},
                        member_counts=counts, phi_floor=phi_floor)


def nearest_indices(centroids, zs, l) -> np.ndarray:
    """(B, l) centroid indices by descending dot product, ties broken by lower index."""

    scores = np.atleast_2d(np.asarray(zs, dtype=np.float64)) @ np.asarray(centroids).T
    return np.argsort(-scores, axis=1, kind="stable")[:, :l]


def nearest_centroids(bank: CentroidBank, z, l) -> list:
    """
    The l closest centroids to z as (index, centroid, phi), closest first.

    Raises:
        ValueError: If l is outside [1, N_c].
    """

    if not 1 <= l <= bank.n_c:
        raise ValueError(f"l must lie in [1, {bank.n_c}], got {l}")
    order = nearest_indices(bank.centroids, getattr(z, "z", z), l)[0]

    return [(int(i), bank.centroids[i].copy(), float(bank.phi[i])) for i in order]
