"""Open-world evaluation runs: cluster the evaluation corpus, localize every sample, score per role"""

from __future__ import annotations

import numpy as np
import pandas as pd

from core.domain import CategoryTaxonomy, Role
from core.errors import EmptyComponent
from evalkit.metrics import RATIOS, EvalReport, build_report, loc_acc
from gcam.activation import BoxPrediction, binarize, cam, component_box, largest_component
from gcam.localizer import (DEFAULT_THETA, CorpusFeatures, EvalBank, build_eval_bank, extract_corpus,
                            localize_all)
from libraries.utils import default_logger

SWEEP_THETAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


def default_k(samples, taxonomy: CategoryTaxonomy) -> int:
    """Number of taxonomy categories, capped at the corpus size."""
    return max(1, min(len(taxonomy.all_ids), len(samples)))


def evaluate(state, samples, taxonomy: CategoryTaxonomy, k=None, theta=DEFAULT_THETA, eval_space="feature",
             centroid_source="test", train_bank=None, seed=0, workers=None, ratios=RATIOS):
    """
    Clusters the evaluation samples, predicts one box per sample and builds the per-role report.

    Args:
        state: EncoderState (its online encoder is used) or bare EncoderParams.
        samples (list): Evaluation samples.
        taxonomy (CategoryTaxonomy): Role of every class.
        k (int): Evaluation clusters; defaults to the number of categories.
        theta (float): Binarization threshold.
        eval_space, centroid_source: See gcam.build_eval_bank.
        train_bank (CentroidBank): Training centroids for centroid_source="train".

    Returns:
        tuple: (EvalReport, predictions by sample_id, EvalBank, CorpusFeatures)
    """

    samples = list(samples)
    k = default_k(samples, taxonomy) if k is None else int(k)
    default_logger.info(f"\tEvaluating {len(samples)} samples with k={k}, theta={theta}")

    features = extract_corpus(state, samples)
    bank = build_eval_bank(features, k, seed=seed, eval_space=eval_space, centroid_source=centroid_source,
                           train_bank=train_bank)
    preds = localize_all(samples, state, bank, theta, features, workers)
    clusters = [bank.assignment[s.sample_id] for s in samples]

    report = build_report(clusters, preds, samples, taxonomy, ratios)
    report.extra.update({"theta": theta, "k": k, "eval_space": bank.space, "centroid_source": bank.source})
    default_logger.info(f"\tAll: clus {report.clus_acc['All']:.4f}, loc {report.loc_acc['All']:.4f}, "
                        f"clus-loc {report.clus_loc_acc['All']:.4f}")

    return report, preds, bank, features


def theta_sweep(state, samples, taxonomy: CategoryTaxonomy, bank: EvalBank, features: CorpusFeatures | None = None,
                thetas=SWEEP_THETAS, workers=None, ratios=RATIOS):
    """
    Loc Acc per role for every threshold.

    Returns:
        tuple: (DataFrame with columns theta, role, loc_acc; {role: best theta})
    """

    samples = list(samples)
    features = features if features is not None else extract_corpus(state, samples)
    rows = []
    for theta in thetas:
        scores = loc_acc(localize_all(samples, state, bank, theta, features, workers), samples, taxonomy, ratios)
        rows.extend({"theta": theta, "role": role, "loc_acc": value} for role, value in scores.per_role.items())

    table = pd.DataFrame(rows, columns=["theta", "role", "loc_acc"])
    best = {}
    for role, group in table.dropna(subset=["loc_acc"]).groupby("role", sort=False):
        best[role] = float(group.loc[group["loc_acc"].idxmax(), "theta"])
    default_logger.info(f"\tBest theta per role: {best}")

    return table, best


def parametric_known_report(state, head, samples, taxonomy: CategoryTaxonomy, theta=DEFAULT_THETA,
                            ratios=RATIOS) -> dict:
    """
    Known-class results of the classification head: argmax class (no matching step) and a CAM box
    from the predicted class's weights.

    Returns:
        dict: clus_acc, loc_acc, loc_by_ratio and count for role Known.
    """

    known = [s for s in samples if taxonomy.role_of(s.gt_label) == Role.KNOWN]
    if not known:
        return {"clus_acc": None, "loc_acc": None, "loc_by_ratio": {}, "count": 0}

    features = extract_corpus(state, known)
    predicted = head.predict(features.pooled)
    preds = {}
    for i, sample in enumerate(known):
        m = features.feature_map(i)
        activation = cam(m, head.weight_of(int(predicted[i])), int(predicted[i]))
        image_dims = (sample.image.height, sample.image.width)
        try:
            box = component_box(largest_component(binarize(activation, theta)), (m.h, m.w), image_dims)
        except EmptyComponent:
            box = component_box(np.ones((m.h, m.w), dtype=bool), (m.h, m.w), image_dims)
        preds[sample.sample_id] = BoxPrediction(sample.sample_id, int(predicted[i]), box,
                                                float(activation.data.max()))

    scores = loc_acc(preds, known, taxonomy, ratios)
    correct = predicted == np.asarray([s.gt_label for s in known])

    return {"clus_acc": float(correct.mean()), "loc_acc": scores.per_role["Known"],
            "loc_by_ratio": {f"{r:.1f}": v for r, v in scores.by_ratio["Known"].items()}, "count": len(known)}


def report_row(report: EvalReport, roles=("Known", "NovS", "NovD", "All")) -> dict:
    """Flat Clus/Loc/Clus-Loc columns per role, one experiment row."""

    row = {}
    for role in roles:
        row[f"clus_{role}"] = report.clus_acc.get(role)
        row[f"loc_{role}"] = report.loc_acc.get(role)
        row[f"clusloc_{role}"] = report.clus_loc_acc.get(role)
    return row
