import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import trainer.trainer_class as trainer_class
from core.domain import HyperParams, LabelGate, SplitRole
from core.errors import ConfigError, ConfigInvalid, ShapeMismatch, TooFewPoints
from encoder import PARAM_NAMES, EncoderState
from libraries.utils import make_rng
from trainer import (Banks, CEHead, TrainConfig, ce_loss, extract_rep_cache, make_batches, prepare, recluster, train,
                     train_ce_baseline, train_epoch)
from trainer import checkpoint


def _with_hyper(config, **changes):
    return replace(config, hyper=replace(config.hyper, **changes))


def test_prepare_builds_both_banks(tiny_split, tiny_state, tiny_hyper):
    rep_bank, centroid_bank, cache = prepare(tiny_split, tiny_state, tiny_hyper)

    assert cache.reps.shape == (40, 6)
    assert cache.sample_ids[:12] == [s.sample_id for s in tiny_split.labeled]
    assert centroid_bank.n_c == 8
    assert set(centroid_bank.assignment) == set(cache.sample_ids)
    assert rep_bank.class_ids == tiny_split.taxonomy.known_ids
    assert rep_bank.all().shape == (9, 6)


def test_prepare_is_deterministic(tiny_split, encoder_config, tiny_hyper):
    first = prepare(tiny_split, EncoderState.create(encoder_config, 0), tiny_hyper)
    second = prepare(tiny_split, EncoderState.create(encoder_config, 0), tiny_hyper)

    np.testing.assert_array_equal(first[0].all(), second[0].all())
    np.testing.assert_array_equal(first[1].centroids, second[1].centroids)
    assert first[1].assignment == second[1].assignment


def test_prepare_needs_enough_samples(tiny_split, tiny_state):
    with pytest.raises(TooFewPoints):
        prepare(tiny_split, tiny_state, HyperParams(n_c=64, n_z=3))


def test_recluster_refuses_online_representations(tiny_split, tiny_state, tiny_train_config):
    cache = extract_rep_cache(tiny_state, list(tiny_split.training))
    cache.source = "online"

    with pytest.raises(AssertionError):
        recluster(cache, tiny_train_config.hyper, tiny_train_config)


def test_proportional_batches_visit_every_sample_once(tiny_split):
    batches = make_batches(tiny_split, 8, make_rng(0, 1))

    ids = [s.sample_id for batch in batches for s in batch]
    assert len(batches) == 5
    assert sorted(ids) == sorted(s.sample_id for s in tiny_split.training)
    assert all(sum(s.split_role == SplitRole.LABELED for s in batch) in (2, 3) for batch in batches)


def test_fixed_fraction_batches(tiny_split):
    batches = make_batches(tiny_split, 8, make_rng(0, 1), labeled_fraction=0.5)

    assert len(batches) == 5
    for batch in batches:
        assert len(batch) == 8
        assert sum(s.split_role == SplitRole.LABELED for s in batch) == 4


def test_train_config_rejects_bad_values(tiny_hyper):
    with pytest.raises(ConfigInvalid):
        TrainConfig(hyper=tiny_hyper, mode="supervised")
    with pytest.raises(ConfigInvalid):
        TrainConfig(hyper=tiny_hyper, labeled_batch_fraction=1.0)
    with pytest.raises(ConfigInvalid):
        TrainConfig(hyper=tiny_hyper, recluster_every=0)
    with pytest.raises(ConfigInvalid):
        TrainConfig(hyper=tiny_hyper, centroid_warmup=-1)


def test_scl_only_drops_the_centroid_weight(tiny_hyper):
    assert TrainConfig(hyper=tiny_hyper, mode="scl_only").loss_weights == (1.0, 0.0)
    assert TrainConfig(hyper=tiny_hyper).loss_weights == (1.0, 0.5)


def test_warmup_weights(tiny_hyper):
    config = TrainConfig(hyper=tiny_hyper, centroid_warmup=2)

    assert [config.weights_at(epoch) for epoch in range(4)] == [(1.0, 0.0), (1.0, 0.0), (1.0, 0.5), (1.0, 0.5)]
    assert replace(config, mode="scl_only").weights_at(5) == (1.0, 0.0)


def test_warmup_epochs_skip_the_centroid_term(tiny_split, tiny_train_config):
    config = replace(tiny_train_config, centroid_warmup=1, checkpoint_dir="")

    history = train(config, dataset=tiny_split).history

    assert history[0]["centroid"] == 0.0 and history[0]["scl"] > 0.0
    assert history[1]["centroid"] > 0.0
    assert history[0]["total"] == pytest.approx(history[0]["scl"] * 12 / 40)


def test_anchor_losses_go_through_the_weighted_sum(tiny_split, tiny_state, tiny_train_config, monkeypatch):
    config = tiny_train_config
    rep_bank, centroid_bank, _ = prepare(tiny_split, tiny_state, config.hyper, config)
    calls = []
    original = trainer_class.total_loss

    def recording(scl, centroid, alpha, beta):
        calls.append((alpha, beta, scl.value, centroid.value))
        return original(scl, centroid, alpha, beta)

    monkeypatch.setattr(trainer_class, "total_loss", recording)
    stats = train_epoch(tiny_state, Banks(rep_bank, centroid_bank), tiny_split, config.hyper, config)

    assert len(calls) == len(tiny_split.training)
    assert {(alpha, beta) for alpha, beta, _, _ in calls} == {(1.0, 0.5)}
    assert stats.total == pytest.approx(np.mean([scl + 0.5 * centroid for _, _, scl, centroid in calls]))


def test_zero_learning_rate_still_rotates_queues(tiny_split, tiny_state, tiny_train_config, monkeypatch):
    config = _with_hyper(tiny_train_config, lr=0.0)
    rep_bank, centroid_bank, _ = prepare(tiny_split, tiny_state, config.hyper, config)
    banks = Banks(rep_bank, centroid_bank)
    before = tiny_state.online.copy()

    enqueued = []
    original = rep_bank.enqueue
    monkeypatch.setattr(rep_bank, "enqueue", lambda y, z: (enqueued.append(y), original(y, z)))

    stats = train_epoch(tiny_state, banks, tiny_split, config.hyper, config, epoch=0)

    for name in PARAM_NAMES:
        np.testing.assert_array_equal(tiny_state.online[name], before[name])
    assert sorted(enqueued) == sorted(s.gt_label for s in tiny_split.labeled)
    assert tiny_state.step_count == stats.batches
    rep_bank.check_lengths()


def test_unlabeled_only_batches_have_no_scl(tiny_split, tiny_state, tiny_train_config):
    config = tiny_train_config
    rep_bank, centroid_bank, _ = prepare(tiny_split, tiny_state, config.hyper, config)
    unlabeled_only = replace(tiny_split, labeled=())

    stats = train_epoch(tiny_state, Banks(rep_bank, centroid_bank), unlabeled_only, config.hyper, config)

    assert stats.labeled_anchors == 0
    assert stats.unlabeled_anchors == len(tiny_split.unlabeled)
    assert stats.scl == 0.0
    assert stats.centroid > 0.0


def test_training_never_reads_unlabeled_labels(tiny_split, tiny_state, tiny_train_config):
    gate = LabelGate()
    rep_bank, centroid_bank, _ = prepare(tiny_split, tiny_state, tiny_train_config.hyper, tiny_train_config, gate)
    train_epoch(tiny_state, Banks(rep_bank, centroid_bank), tiny_split, tiny_train_config.hyper, tiny_train_config,
                gate=gate)

    assert gate.accessed_ids == {s.sample_id for s in tiny_split.labeled}


def test_two_epoch_smoke_run(tiny_split, tiny_train_config):
    result = train(tiny_train_config, dataset=tiny_split)

    assert len(result.history) == 2
    for row in result.history:
        assert np.isfinite(row["total"]) and row["total"] >= 0.0
        assert row["reclustered"]
    run_dir = Path(tiny_train_config.checkpoint_dir)
    lines = (run_dir / "history.jsonl").read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [0, 1]
    assert checkpoint.latest(run_dir).endswith("epoch-0001")
    assert not list((run_dir / "checkpoints").glob(".*.tmp"))


@pytest.mark.parametrize("epochs, every, expected", [(1, 1, 2), (3, 2, 3), (4, 1, 5)])
def test_recluster_count(tiny_split, tiny_train_config, monkeypatch, epochs, every, expected):
    calls = []
    original = trainer_class.recluster
    monkeypatch.setattr(trainer_class, "recluster", lambda *args: (calls.append(1), original(*args))[1])
    config = replace(_with_hyper(tiny_train_config, epochs=epochs), recluster_every=every, checkpoint_dir="")

    train(config, dataset=tiny_split)

    assert len(calls) == expected


def test_scl_only_still_reclusters(tiny_split, tiny_train_config):
    config = replace(tiny_train_config, mode="scl_only", checkpoint_dir="")
    result = train(config, dataset=tiny_split)

    assert all(row["centroid"] == 0.0 for row in result.history)
    assert all(row["reclustered"] for row in result.history)
    assert result.centroid_bank.n_c == config.hyper.n_c


def test_untrained_mode_keeps_the_initial_encoder(tiny_split, tiny_train_config, encoder_config):
    result = train(replace(tiny_train_config, mode="untrained"), dataset=tiny_split)
    fresh = EncoderState.create(encoder_config, tiny_train_config.hyper.seed)

    assert result.history == []
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(result.state.online[name], fresh.online[name])
    assert checkpoint.load(tiny_train_config.checkpoint_dir).epoch == 0


def test_same_seed_same_run(tiny_split, tiny_train_config, tmp_path):
    first = train(replace(tiny_train_config, checkpoint_dir=str(tmp_path / "a")), dataset=tiny_split)
    second = train(replace(tiny_train_config, checkpoint_dir=str(tmp_path / "b")), dataset=tiny_split)

    for name in PARAM_NAMES:
        np.testing.assert_array_equal(first.state.online[name], second.state.online[name])
    assert first.history == second.history
    for name in ("centroids.owt", "phi.owt", "rep_bank.owt", "online/patch_w.owt"):
        a = Path(checkpoint.latest(tmp_path / "a")) / name
        b = Path(checkpoint.latest(tmp_path / "b")) / name
        assert a.read_bytes() == b.read_bytes()


def test_checkpoint_restores_training_state(tiny_split, tiny_train_config):
    result = train(tiny_train_config, dataset=tiny_split)
    restored = checkpoint.load(tiny_train_config.checkpoint_dir)

    assert restored.epoch == 1
    assert restored.state.step_count == result.state.step_count
    assert restored.history == result.history
    assert set(restored.velocity) == set(PARAM_NAMES)
    np.testing.assert_allclose(restored.state.momentum["mix1_w"], result.state.momentum["mix1_w"], rtol=1e-6)
    np.testing.assert_allclose(restored.rep_bank.all(), result.rep_bank.all(), rtol=1e-6, atol=1e-7)
    assert restored.centroid_bank.assignment == {k: v for k, v in result.centroid_bank.assignment.items()}
    assert checkpoint.config_from_header(restored.header) == tiny_train_config


def test_resume_continues_where_it_stopped(tiny_split, tiny_train_config, tmp_path):
    full = train(replace(tiny_train_config, checkpoint_dir=str(tmp_path / "full")), dataset=tiny_split)

    partial_config = replace(_with_hyper(tiny_train_config, epochs=1), checkpoint_dir=str(tmp_path / "part"))
    train(partial_config, dataset=tiny_split)
    resumed = train(replace(tiny_train_config, checkpoint_dir=str(tmp_path / "part")), dataset=tiny_split,
                    resume=True)

    assert [row["epoch"] for row in resumed.history] == [0, 1]
    assert len((tmp_path / "part" / "history.jsonl").read_text().splitlines()) == 2
    assert resumed.state.step_count == full.state.step_count
    # persisted tensors are float32, so the resumed run matches up to that rounding
    for name in PARAM_NAMES:
        np.testing.assert_allclose(resumed.state.online[name], full.state.online[name], rtol=1e-4, atol=1e-5)


def test_broken_checkpoints_are_config_errors(tiny_split, tiny_train_config, tmp_path):
    with pytest.raises(ConfigError):
        checkpoint.load(tmp_path / "nothing-here")

    train(replace(tiny_train_config, mode="untrained"), dataset=tiny_split)
    header_path = Path(checkpoint.latest(tiny_train_config.checkpoint_dir)) / checkpoint.HEADER_NAME
    header = json.loads(header_path.read_text())
    header["hyper_hash"] = "0" * 64
    header_path.write_text(json.dumps(header))

    with pytest.raises(ConfigError, match="hash"):
        checkpoint.load(tiny_train_config.checkpoint_dir)


@pytest.mark.parametrize("seed", range(20))
def test_ce_loss_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 3))
    targets = rng.integers(0, 3, size=4)
    _, grad = ce_loss(logits, targets)

    eps = 1e-6
    numeric = np.zeros_like(logits)
    for index in np.ndindex(*logits.shape):
        step = np.zeros_like(logits)
        step[index] = eps
        numeric[index] = (ce_loss(logits + step, targets)[0] - ce_loss(logits - step, targets)[0]) / (2 * eps)

    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_ce_loss_value():
    value, _ = ce_loss(np.zeros((2, 4)), [1, 3])

    assert value == pytest.approx(np.log(4))


def test_head_shapes_must_agree():
    with pytest.raises(ShapeMismatch):
        CEHead(np.zeros((4, 3)), np.zeros(2), [0, 1, 2])

    head = CEHead.create(4, [3, 5], seed=0)
    assert head.w.shape == (4, 2)
    np.testing.assert_array_equal(head.weight_of(5), head.w[:, 1])


def test_parametric_baseline_reads_only_labeled_samples(tiny_split, tiny_train_config):
    gate = LabelGate()
    config = _with_hyper(tiny_train_config, epochs=15, lr=0.05, batch_size=12)

    state, head, history = train_ce_baseline(config, tiny_split, gate=gate)

    assert gate.accessed_ids == {s.sample_id for s in tiny_split.labeled}
    assert head.class_ids == tiny_split.taxonomy.known_ids
    assert len(history) == 15
    assert history[-1]["ce"] < history[0]["ce"]
    assert state.step_count == 15


def test_ce_baseline_mode_saves_its_head(tiny_split, tiny_train_config):
    result = train(replace(tiny_train_config, mode="ce_baseline"), dataset=tiny_split)
    restored = checkpoint.load(tiny_train_config.checkpoint_dir)

    assert result.head is not None
    assert restored.head.class_ids == result.head.class_ids
    np.testing.assert_allclose(restored.head.w, result.head.w, rtol=1e-6, atol=1e-7)
    assert [row["epoch"] for row in restored.history] == [0, 1]
