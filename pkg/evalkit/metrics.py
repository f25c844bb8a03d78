from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from core.domain import Box, CategoryTaxonomy, Role
from core.errors import LengthMismatch, MissingPrediction

RATIOS = (0.3, 0.5, 0.7)
REPORT_ROLES = ("Known", "NovS", "NovD", "All")


def hungarian(cost) -> list:
    """
    Minimum-total-cost matching of size min(r, c).

    Args:
        cost: (r, c) finite cost matrix; rectangular input behaves as if the smaller side were
            zero-padded.

    Returns:
        list: (row, col) pairs sorted by row.
    """

    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or not np.all(np.isfinite(cost)):
        raise ValueError("hungarian expects a finite 2-D cost matrix")
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)

    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def contingency(pred_clusters, gt_labels):
    """Counts matrix (clusters x classes) with the sorted cluster and class ids it is indexed by."""

    pred = np.asarray(pred_clusters)
    gt = np.asarray(gt_labels)
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions for {len(gt)} labels")

    cluster_ids, pred_index = np.unique(pred, return_inverse=True)
    class_ids, gt_index = np.unique(gt, return_inverse=True)
    counts = np.zeros((len(cluster_ids), len(class_ids)), dtype=np.int64)
    np.add.at(counts, (pred_index, gt_index), 1)

    return counts, cluster_ids, class_ids


def match_clusters(pred_clusters, gt_labels) -> dict:
    """One-to-one cluster -> class mapping maximising agreement; unmatched clusters are left out."""

    counts, cluster_ids, class_ids = contingency(pred_clusters, gt_labels)
    if counts.size == 0:
        return {}

    return {cluster_ids[r].item(): class_ids[c].item() for r, c in hungarian(-counts)}


def mapped_correct(pred_clusters, gt_labels, mapping: dict) -> np.ndarray:
    gt = np.asarray(gt_labels)
    mapped = np.array([mapping.get(p.item() if hasattr(p, "item") else p, None) for p in np.asarray(pred_clusters)],
                      dtype=object)
    return np.array([m is not None and m == g for m, g in zip(mapped, gt)], dtype=bool)


def cluster_accuracy(pred_clusters, gt_labels) -> float:
    """Fraction of samples whose cluster maps to their class under the optimal matching."""

    if len(pred_clusters) == 0:
        return 0.0
    mapping = match_clusters(pred_clusters, gt_labels)
    return float(mapped_correct(pred_clusters, gt_labels, mapping).mean())


def _role_masks(roles) -> dict:
    roles = np.array([r.value if isinstance(r, Role) else str(r) for r in roles])
    masks = {role: roles == role for role in REPORT_ROLES[:-1]}
    masks["All"] = np.ones(len(roles), dtype=bool)
    return masks


def _mean(values, mask):
    return float(values[mask].mean()) if mask.any() else None


def clus_acc(pred_clusters, gt_labels, roles):
    """
    Clustering accuracy per role under a single mapping fixed on the full evaluation set.

    Args:
        pred_clusters (list): Cluster id per sample.
        gt_labels (list): Class id per sample.
        roles (list): Role (or its string value) per sample.

    Returns:
        tuple: ({role: accuracy or None when the role has no samples}, mapping).

    Raises:
        LengthMismatch: If the three lists differ in length.
    """

    if not len(pred_clusters) == len(gt_labels) == len(roles):
        raise LengthMismatch("pred_clusters, gt_labels and roles must have equal lengths")

    mapping = match_clusters(pred_clusters, gt_labels)
    correct = mapped_correct(pred_clusters, gt_labels, mapping).astype(np.float64)
    per_role = {role: _mean(correct, mask) for role, mask in _role_masks(roles).items()}

    return per_role, mapping


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two half-open boxes."""

    ix = max(0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    intersection = ix * iy
    union = a.area + b.area - intersection

    return intersection / union if union > 0 else 0.0


@dataclass
class RoleScores:
    """Per-role score averaged over ratios, plus the per-ratio breakdown."""

    per_role: dict
    by_ratio: dict = field(default_factory=dict)


def _best_ious(preds: dict, samples) -> np.ndarray:
    best = []
    for sample in samples:
        pred = preds.get(sample.sample_id)
        if pred is None or getattr(pred, "box", None) is None:
            raise MissingPrediction(f"No box prediction for sample {sample.sample_id}")
        best.append(max(iou(pred.box, gt) for gt in sample.gt_boxes))
    return np.asarray(best, dtype=np.float64)


def _ratio_scores(hits_by_ratio: dict, masks: dict) -> RoleScores:
    by_ratio = {role: {r: _mean(hits.astype(np.float64), mask) for r, hits in hits_by_ratio.items()}
                for role, mask in masks.items()}
    per_role = {}
    for role, scores in by_ratio.items():
        values = [v for v in scores.values() if v is not None]
        per_role[role] = float(np.mean(values)) if values else None
    return RoleScores(per_role, by_ratio)


def loc_acc(preds: dict, samples, taxonomy: CategoryTaxonomy, ratios=RATIOS) -> RoleScores:
    """
    Localization accuracy judged against each sample's own boxes, averaged over IoU ratios.

    Args:
        preds (dict): sample_id -> prediction carrying a .box.
        samples (list): Evaluation samples.
        taxonomy (CategoryTaxonomy): Supplies the role of each sample's class.
        ratios (tuple): IoU thresholds.

    Raises:
        MissingPrediction: If a sample has no prediction.
    """

    best = _best_ious(preds, samples)
    masks = _role_masks([taxonomy.role_of(s.gt_label) for s in samples])

    return _ratio_scores({r: best >= r for r in ratios}, masks)


def clus_loc_acc(preds: dict, cluster_mapping: dict, samples, taxonomy: CategoryTaxonomy,
                 ratios=RATIOS) -> RoleScores:
    """A sample counts at ratio r when its mapped cluster equals its class and its best IoU >= r."""

    best = _best_ious(preds, samples)
    clusters = [preds[s.sample_id].cluster_id for s in samples]
    correct = mapped_correct(clusters, [s.gt_label for s in samples], cluster_mapping)
    masks = _role_masks([taxonomy.role_of(s.gt_label) for s in samples])

    return _ratio_scores({r: correct & (best >= r) for r in ratios}, masks)


@dataclass
class EvalReport:
    """
    Attributes:
        clus_acc, loc_acc, clus_loc_acc (dict): role -> score (None for a role with no samples).
        loc_by_ratio, clus_loc_by_ratio (dict): role -> {ratio: score}.
        counts (dict): role -> number of evaluated samples.
        extra (dict): Additional sections (parametric-head report, theta, cluster count ...).
    """

    clus_acc: dict
    loc_acc: dict
    clus_loc_acc: dict
    loc_by_ratio: dict
    clus_loc_by_ratio: dict
    counts: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def ratio_keys(table):
            return {role: {f"{r:.1f}": v for r, v in scores.items()} for role, scores in table.items()}

        return {
            "roles": {role: {"clus_acc": self.clus_acc.get(role), "clus_loc_acc": self.clus_loc_acc.get(role),
                             "loc_acc": self.loc_acc.get(role), "count": self.counts.get(role, 0)}
                      for role in REPORT_ROLES},
            "loc_by_ratio": ratio_keys(self.loc_by_ratio),
            "clus_loc_by_ratio": ratio_keys(self.clus_loc_by_ratio),
            "extra": self.extra,
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per (role, metric, ratio); ratio 'mean' holds the ratio-averaged value."""

        rows = []
        for role in REPORT_ROLES:
            rows.append({"role": role, "metric": "clus_acc", "ratio": "mean", "value": self.clus_acc.get(role)})
            rows.append({"role": role, "metric": "loc_acc", "ratio": "mean", "value": self.loc_acc.get(role)})
            rows.append({"role": role, "metric": "clus_loc_acc", "ratio": "mean",
                         "value": self.clus_loc_acc.get(role)})
            for r, v in self.loc_by_ratio.get(role, {}).items():
                rows.append({"role": role, "metric": "loc_acc", "ratio": f"{r:.1f}", "value": v})
            for r, v in self.clus_loc_by_ratio.get(role, {}).items():
                rows.append({"role": role, "metric": "clus_loc_acc", "ratio": f"{r:.1f}", "value": v})

        return pd.DataFrame(rows, columns=["role", "metric", "ratio", "value"])


def build_report(pred_clusters, preds: dict, samples, taxonomy: CategoryTaxonomy, ratios=RATIOS) -> EvalReport:
    """Runs clus_acc, loc_acc and clus_loc_acc over one evaluation set with one global mapping."""

    gt = [s.gt_label for s in samples]
    roles = [taxonomy.role_of(label) for label in gt]
    clus, mapping = clus_acc(pred_clusters, gt, roles)
    loc = loc_acc(preds, samples, taxonomy, ratios)
    clus_loc = clus_loc_acc(preds, mapping, samples, taxonomy, ratios)
    counts = {role: int(mask.sum()) for role, mask in _role_masks(roles).items()}

    return EvalReport(clus_acc=clus, loc_acc=loc.per_role, clus_loc_acc=clus_loc.per_role,
                      loc_by_ratio=loc.by_ratio, clus_loc_by_ratio=clus_loc.by_ratio, counts=counts,
                      extra={"n_clusters": int(len(set(np.asarray(pred_clusters).tolist())))})
