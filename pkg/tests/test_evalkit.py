import itertools
from dataclasses import replace

import numpy as np
import pytest

from core.domain import Box, Category, CategoryTaxonomy, Role, SplitRole
from core.errors import LengthMismatch, MissingPrediction
from evalkit import build_report, clus_acc, clus_loc_acc, cluster_accuracy, hungarian, iou, loc_acc
from evalkit.protocol import default_k, evaluate, parametric_known_report, report_row, theta_sweep
from gcam import BoxPrediction
from tests.conftest import make_sample
from trainer.ce_baseline import CEHead

GT = (0, 0, 10, 10)


def _samples(labels, side=10):
    return [make_sample(f"s{i}", label, SplitRole.TEST, side=side, box=GT) for i, label in enumerate(labels)]


def _preds(samples, boxes, clusters=None):
    clusters = clusters or [0] * len(samples)
    return {s.sample_id: BoxPrediction(s.sample_id, c, Box(*b), 1.0) for s, b, c in zip(samples, boxes, clusters)}


def _brute_force(cost):
    r, c = cost.shape
    if r <= c:
        return min(sum(cost[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
    return min(sum(cost[p[j], j] for j in range(c)) for p in itertools.permutations(range(r), c))


def test_hungarian_small_examples():
    assert hungarian([[1, 2], [2, 1]]) == [(0, 0), (1, 1)]
    eye_cost = 1 - np.eye(4)
    assert hungarian(eye_cost) == [(i, i) for i in range(4)]
    assert hungarian(np.zeros((0, 0))) == []


@pytest.mark.parametrize("n", range(1, 7))
def test_hungarian_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(100):
        cost = rng.integers(0, 20, size=(n, n)).astype(float)
        pairs = hungarian(cost)
        assert len(pairs) == n
        assert sum(cost[r, c] for r, c in pairs) == _brute_force(cost)


@pytest.mark.parametrize("shape", [(2, 5), (5, 3)])
def test_hungarian_rectangular(shape):
    cost = np.random.default_rng(0).uniform(size=shape)
    pairs = hungarian(cost)

    assert len(pairs) == min(shape)
    assert sum(cost[r, c] for r, c in pairs) == pytest.approx(_brute_force(cost))


def test_hungarian_rejects_non_finite_costs():
    with pytest.raises(ValueError):
        hungarian([[0.0, np.inf]])


def test_cluster_accuracy_from_a_contingency_table():
    pred = [0, 0, 0, 0, 1, 1, 1, 1]
    gt = [0, 0, 0, 1, 1, 1, 1, 1]

    assert cluster_accuracy(pred, gt) == pytest.approx(0.875)


def test_clus_acc_ignores_cluster_names():
    gt = [0, 0, 1, 1, 2, 2]
    roles = ["Known", "Known", "NovS", "NovS", "NovD", "NovD"]

    per_role, mapping = clus_acc([7, 7, 3, 3, 9, 9], gt, roles)

    assert per_role == {"Known": 1.0, "NovS": 1.0, "NovD": 1.0, "All": 1.0}
    assert mapping == {7: 0, 3: 1, 9: 2}


def test_extra_clusters_score_zero():
    per_role, mapping = clus_acc([0, 0, 1, 2], [5, 5, 6, 6], [Role.KNOWN] * 4)

    assert per_role["All"] == pytest.approx(0.75)
    assert len(mapping) == 2


def test_mapping_is_fixed_on_the_whole_set():
    # matching NovS alone would score 1.0; the global mapping already sends cluster 1 to class 0
    pred = [1, 1, 1, 0, 1]
    gt = [0, 0, 0, 1, 2]
    roles = ["Known", "Known", "Known", "NovS", "NovS"]

    per_role, mapping = clus_acc(pred, gt, roles)

    assert mapping == {1: 0, 0: 1}
    assert per_role["Known"] == 1.0
    assert per_role["NovS"] == 0.5
    assert per_role["NovD"] is None


def test_clus_acc_length_check():
    with pytest.raises(LengthMismatch):
        clus_acc([0, 1], [0], ["Known", "Known"])


def test_iou_examples():
    a, b = Box(0, 0, 4, 4), Box(2, 0, 6, 4)

    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 6, 6)) == 0.0
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(b, a) == iou(a, b)


def test_iou_is_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x0, y0, x1, y1 = rng.integers(0, 8, size=4)
        a = Box(int(x0), int(y0), int(x0 + 1 + rng.integers(4)), int(y0 + 1 + rng.integers(4)))
        b = Box(int(x1), int(y1), int(x1 + 1 + rng.integers(4)), int(y1 + 1 + rng.integers(4)))
        assert 0.0 <= iou(a, b) <= 1.0


def test_loc_acc_thresholds(small_taxonomy):
    samples = _samples([0, 3, 4])

    perfect = loc_acc(_preds(samples, [GT] * 3), samples, small_taxonomy)
    partial = loc_acc(_preds(samples, [(0, 0, 10, 6)] * 3), samples, small_taxonomy)

    assert perfect.per_role == {"Known": 1.0, "NovS": 1.0, "NovD": 1.0, "All": 1.0}
    assert partial.per_role["All"] == pytest.approx(2 / 3)
    assert partial.by_ratio["All"] == {0.3: 1.0, 0.5: 1.0, 0.7: 0.0}


def test_loc_acc_uses_the_best_gt_box(small_taxonomy):
    sample = replace(make_sample("two", 0, SplitRole.TEST, side=10), gt_boxes=(Box(0, 0, 2, 2), Box(5, 5, 10, 10)))

    scores = loc_acc(_preds([sample], [(5, 5, 10, 10)]), [sample], small_taxonomy)

    assert scores.per_role["Known"] == 1.0


def test_missing_prediction(small_taxonomy):
    samples = _samples([0, 1])

    with pytest.raises(MissingPrediction):
        loc_acc(_preds(samples[:1], [GT]), samples, small_taxonomy)


def test_clus_loc_needs_both(small_taxonomy):
    samples = _samples([0, 0, 1, 1])
    preds = _preds(samples, [GT] * 4, clusters=[0, 0, 0, 0])
    mapping = {0: 0}

    scores = clus_loc_acc(preds, mapping, samples, small_taxonomy)

    assert scores.per_role["All"] == pytest.approx(0.5)


def test_report_never_credits_clus_loc_above_its_parts(small_taxonomy):
    rng = np.random.default_rng(7)
    for _ in range(200):
        labels = rng.integers(0, 5, size=12).tolist()
        samples = _samples(labels)
        clusters = rng.integers(0, 6, size=12).tolist()
        boxes = []
        for _ in labels:
            x0, y0 = rng.integers(0, 6, size=2)
            boxes.append((int(x0), int(y0), int(x0 + 1 + rng.integers(0, 10 - x0)),
                          int(y0 + 1 + rng.integers(0, 10 - y0))))
        report = build_report(clusters, _preds(samples, boxes, clusters), samples, small_taxonomy)

        for role in ("Known", "NovS", "NovD", "All"):
            if report.counts[role]:
                assert report.clus_loc_acc[role] <= min(report.clus_acc[role], report.loc_acc[role]) + 1e-12


def test_report_serialisation(small_taxonomy):
    samples = _samples([0, 1, 3, 4])
    report = build_report([0, 1, 2, 3], _preds(samples, [GT] * 4, [0, 1, 2, 3]), samples, small_taxonomy)

    as_dict = report.to_dict()
    assert as_dict["roles"]["All"] == {"clus_acc": 1.0, "clus_loc_acc": 1.0, "loc_acc": 1.0, "count": 4}
    assert as_dict["loc_by_ratio"]["Known"] == {"0.3": 1.0, "0.5": 1.0, "0.7": 1.0}
    assert as_dict["extra"]["n_clusters"] == 4

    frame = report.to_frame()
    assert list(frame.columns) == ["role", "metric", "ratio", "value"]
    # 3 means + 3 loc ratios + 3 clus-loc ratios per role
    assert len(frame) == 4 * 9

    row = report_row(report)
    assert row["clus_Known"] == 1.0 and row["clusloc_NovD"] == 1.0


def test_default_k_is_the_category_count(small_taxonomy):
    assert default_k(_samples([0] * 10), small_taxonomy) == 5
    assert default_k(_samples([0, 1]), small_taxonomy) == 2


def test_evaluate_end_to_end(tiny_split, tiny_state):
    report, preds, bank, features = evaluate(tiny_state, tiny_split.test, tiny_split.taxonomy, seed=0)

    assert report.counts == {"Known": 9, "NovS": 3, "NovD": 3, "All": 15}
    assert set(preds) == {s.sample_id for s in tiny_split.test}
    assert report.extra["k"] == 5
    assert bank.n_clusters == 5
    for role in ("Known", "NovS", "NovD", "All"):
        assert 0.0 <= report.clus_loc_acc[role] <= min(report.clus_acc[role], report.loc_acc[role]) + 1e-12

    table, best = theta_sweep(tiny_state, tiny_split.test, tiny_split.taxonomy, bank, features,
                              thetas=(0.2, 0.6))
    assert list(table.columns) == ["theta", "role", "loc_acc"]
    assert len(table) == 2 * 4
    assert set(best) == {"Known", "NovS", "NovD", "All"}


def test_evaluation_is_deterministic(tiny_split, tiny_state):
    first, _, _, _ = evaluate(tiny_state, tiny_split.test, tiny_split.taxonomy, seed=3)
    second, _, _, _ = evaluate(tiny_state, tiny_split.test, tiny_split.taxonomy, seed=3)

    assert first.to_dict() == second.to_dict()


def test_report_without_a_role():
    taxonomy = CategoryTaxonomy((Category(0, 0, Role.KNOWN), Category(1, 1, Role.NOVD)))
    samples = _samples([0, 0])

    report = build_report([0, 0], _preds(samples, [GT, GT]), samples, taxonomy)

    assert report.clus_acc["NovD"] is None
    assert report.counts["NovS"] == 0


def test_parametric_report_scores_known_samples_only(tiny_split, tiny_state):
    known = tiny_split.taxonomy.known_ids
    # zero weights and a bias on the second class: every sample is predicted as that class
    head = CEHead(np.zeros((8, len(known))), np.eye(len(known))[1], list(known))

    result = parametric_known_report(tiny_state, head, tiny_split.test, tiny_split.taxonomy)

    assert result["count"] == 9
    assert result["clus_acc"] == pytest.approx(1 / 3)
    assert 0.0 <= result["loc_acc"] <= 1.0
    assert set(result["loc_by_ratio"]) == {"0.3", "0.5", "0.7"}


def test_parametric_report_without_known_samples(tiny_split, tiny_state):
    known = tiny_split.taxonomy.known_ids
    head = CEHead(np.zeros((8, len(known))), np.zeros(len(known)), list(known))
    novel = [s for s in tiny_split.test if s.gt_label not in known]

    assert parametric_known_report(tiny_state, head, novel, tiny_split.taxonomy)["count"] == 0
