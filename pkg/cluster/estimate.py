"""Estimating the number of underlying classes from labeled-subset clustering accuracy"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from cluster.kmeans import kmeans
from core.errors import RangeInvalid
from evalkit.metrics import cluster_accuracy
from libraries.utils import default_logger, make_rng


@dataclass
class ClassCountEstimate:
    k_hat: int
    sweep: pd.DataFrame


def _pick_best(scores: dict) -> int:
    best = max(scores.values())
    tied = sorted(k for k, v in scores.items() if v >= best - 1e-12)
    return tied[(len(tied) - 1) // 2]


def class_means(points, targets) -> np.ndarray:
    """(m, d) mean of each class present in targets, in ascending class order."""

    targets = np.asarray(targets)
    return np.array([points[targets == c].mean(axis=0) for c in np.unique(targets)]).reshape(-1, points.shape[1])


def estimate_class_count(reps, labeled_index, labeled_targets, k_min, k_max, seed=0,
                         max_iters=100, n_init=2) -> ClassCountEstimate:
    """
    Searches k on a shrinking grid, scoring each candidate by Hungarian clustering accuracy
    on a held-out half of the labeled samples.

    The other half anchors the clustering: its class means are the first k-means centres of every
    candidate (the lowest class ids when k is smaller than the number of classes), and k-means++ draws
    the rest.

    Args:
        reps (np.ndarray): (n, d) representations of every sample (labeled and unlabeled).
        labeled_index (array-like): Row indices of labeled samples.
        labeled_targets (array-like): Class ids aligned with labeled_index.
        k_min, k_max (int): Inclusive search range.
        seed (int): Seed for the held-out split and every k-means run.

    Returns:
        ClassCountEstimate: k_hat and the sweep table (k, inertia, labeled_acc) of every evaluated k.

    Raises:
        RangeInvalid: If the range is empty, below 1, above the number of points, or no labels are given.
    """

    reps = np.asarray(reps, dtype=np.float64)
    labeled_index = np.asarray(labeled_index, dtype=np.int64)
    labeled_targets = np.asarray(labeled_targets)
    if len(labeled_index) == 0 or len(labeled_index) != len(labeled_targets):
        raise RangeInvalid("Need a nonempty labeled subset with one target per index")
    if not 1 <= k_min <= k_max <= reps.shape[0]:
        raise RangeInvalid(f"Invalid class-count range [{k_min}, {k_max}] for {reps.shape[0]} points")

    order = make_rng(seed, 0xE5).permutation(len(labeled_index))
    fitting, held_out = order[:len(order) // 2], order[len(order) // 2:]
    held_index, held_targets = labeled_index[held_out], labeled_targets[held_out]
    anchors = class_means(reps[labeled_index[fitting]], labeled_targets[fitting])

    default_logger.info(f"\tEstimating class count in [{k_min}, {k_max}] on {len(held_index)} held-out labeled "
                        f"samples, {len(anchors)} classes anchored by the other half")

    rows = {}

    def evaluate(k):
        if k not in rows:
            result = kmeans(reps, k, max_iters=max_iters, seed=seed, n_init=n_init, init=anchors)
            acc = cluster_accuracy(result.assignment[held_index], held_targets)
            rows[k] = {"k": k, "inertia": result.inertia, "labeled_acc": acc}
            default_logger.info(f"\t\tk={k}: labeled acc {acc:.4f}, inertia {result.inertia:.4f}")
        return rows[k]["labeled_acc"]

    lo, hi = k_min, k_max
    while True:
        step = max(1, (hi - lo) // 4)
        candidates = sorted(set(range(lo, hi + 1, step)) | {hi})
        scores = {k: evaluate(k) for k in candidates}
        best = _pick_best(scores)
        if step == 1:
            break
        lo, hi = max(k_min, best - step), min(k_max, best + step)

    k_hat = _pick_best({k: row["labeled_acc"] for k, row in rows.items()})
    sweep = pd.DataFrame([rows[k] for k in sorted(rows)], columns=["k", "inertia", "labeled_acc"])
    default_logger.info(f"\tEstimated class count: {k_hat}")

    return ClassCountEstimate(k_hat=k_hat, sweep=sweep)
