"""Contrastive representation co-learning over labeled and unlabeled data"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from banks.centroid_bank import CentroidBank, rebuild_centroids
from banks.rep_bank import RepBank, init_rep_bank
from core.domain import DatasetSplit, HyperParams, LabelGate, SplitRole
from core.manifest import load_split
from encoder.encoder_class import EncoderState, backward, forward_batch, momentum_update, sgd_step
from libraries.io_utils import append_json_line
from libraries.utils import default_logger, make_rng
from losses.contrastive import LossOutput, mcl_loss, ocl_loss, scl_loss, total_loss
from trainer import checkpoint
from trainer.ce_baseline import CEHead, train_ce_baseline
from trainer.config import TrainConfig

MOMENTUM = "momentum"
_BATCH_STREAM = 0xBA
_NEGATIVE_STREAM = 0x4E


@dataclass
class RepCache:
    """Representations of every training sample, tagged with the encoder that produced them."""

    sample_ids: list
    reps: np.ndarray = field(repr=False)
    source: str = MOMENTUM


def extract_rep_cache(state: EncoderState, samples, batch_size=256) -> RepCache:
    """Momentum-encoder representations of samples, in order."""

    reps = [forward_batch(state.momentum, [s.image for s in samples[i:i + batch_size]]).z
            for i in range(0, len(samples), batch_size)]
    return RepCache([s.sample_id for s in samples], np.concatenate(reps), source=MOMENTUM)


def recluster(cache: RepCache, hyper: HyperParams, config: TrainConfig) -> CentroidBank:
    if cache.source != MOMENTUM:
        raise AssertionError(f"Re-clustering needs momentum representations, got {cache.source!r}")
    return rebuild_centroids(cache.reps, hyper.n_c, config.kmeans, cache.sample_ids, config.phi_floor)


@dataclass
class Banks:
    rep_bank: RepBank
    centroid_bank: CentroidBank


@dataclass
class EpochStats:
    epoch: int
    batches: int
    labeled_anchors: int
    unlabeled_anchors: int
    scl: float
    centroid: float
    total: float
    reclustered: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    state: EncoderState
    centroid_bank: CentroidBank
    history: list
    rep_bank: RepBank | None = None
    head: CEHead | None = None
    velocity: dict = field(default_factory=dict)


def prepare(dataset: DatasetSplit, state: EncoderState, hyper: HyperParams, config: TrainConfig | None = None,
            gate: LabelGate | None = None):
    """
    Caches momentum representations of D, fills the representation bank from D_l and clusters D.

    Returns:
        tuple: (RepBank, CentroidBank, RepCache)

    Raises:
        EmptyClass: If a known class has no labeled sample.
        TooFewPoints: If n_c exceeds the number of training samples.
    """

    config = config or TrainConfig(hyper=hyper, encoder=state.online.config)
    training = list(dataset.training)
    default_logger.info(f"\tPreparing banks over {len(dataset.labeled)} labeled and "
                        f"{len(dataset.unlabeled)} unlabeled samples")

    cache = extract_rep_cache(state, training)
    rep_bank = init_rep_bank(dataset.labeled, state, hyper.n_z, known_ids=dataset.taxonomy.known_ids,
                             seed=hyper.seed, reps=cache.reps[:len(dataset.labeled)], gate=gate)
    centroid_bank = recluster(cache, hyper, config)

    return rep_bank, centroid_bank, cache


def make_batches(dataset: DatasetSplit, batch_size: int, rng, labeled_fraction=None) -> list:
    """
    Shuffled mini-batches mixing labeled and unlabeled samples.

    Without a fraction, each batch keeps the dataset's labeled/unlabeled proportion and every sample is
    visited once. With a fraction, each batch draws that share from the labeled stream and the rest from
    the unlabeled stream, wrapping around the shorter one.
    """

    labeled, unlabeled = list(dataset.labeled), list(dataset.unlabeled)
    n_batches = max(1, math.ceil((len(labeled) + len(unlabeled)) / batch_size))
    labeled_order = rng.permutation(len(labeled))
    unlabeled_order = rng.permutation(len(unlabeled))

    if labeled_fraction is None or not labeled or not unlabeled:
        labeled_chunks = np.array_split(labeled_order, n_batches)
        unlabeled_chunks = np.array_split(unlabeled_order, n_batches)
    else:
        n_lab = max(1, int(round(labeled_fraction * batch_size)))
        n_unl = max(1, batch_size - n_lab)
        labeled_chunks = [np.take(labeled_order, np.arange(b * n_lab, (b + 1) * n_lab), mode="wrap")
                          for b in range(n_batches)]
        unlabeled_chunks = [np.take(unlabeled_order, np.arange(b * n_unl, (b + 1) * n_unl), mode="wrap")
                            for b in range(n_batches)]

    batches = []
    for lab, unl in zip(labeled_chunks, unlabeled_chunks):
        batch = [labeled[i] for i in lab] + [unlabeled[i] for i in unl]
        if batch:
            batches.append(batch)
    return batches


def _centroid_term(z, bank: CentroidBank, hyper: HyperParams, config: TrainConfig, rng) -> LossOutput:
    if config.mode == "scl_ocl":
        return ocl_loss(z, bank)
    return mcl_loss(z, bank, hyper.l_pos, hyper.n_neg, rng, pos_temperature=config.mcl_pos_temperature)


def train_epoch(state: EncoderState, banks: Banks, dataset: DatasetSplit, hyper: HyperParams,
                config: TrainConfig | None = None, epoch=0, velocity: dict | None = None,
                gate: LabelGate | None = None) -> EpochStats:
    """
    One pass of co-learning over mixed mini-batches.

    Labeled anchors get alpha * scl + beta * (centroid term); unlabeled anchors only the centroid term. The
    centroid weight is 0 during the first config.centroid_warmup epochs.
    Per batch: forward, losses, backward, SGD step, momentum update, then the momentum representations
    of the batch's labeled samples are enqueued into their class queues.

    Args:
        state (EncoderState): Updated in place.
        banks (Banks): The representation bank is updated in place; the centroid bank stays frozen.
        dataset (DatasetSplit): Training data.
        hyper (HyperParams): Loss and optimizer knobs.
        config (TrainConfig): Mode and batching knobs.
        epoch (int): Keys the epoch's RNG streams.
        velocity (dict): SGD momentum buffers, updated in place.
        gate (LabelGate): Label access gate.

    Returns:
        EpochStats: Mean losses over anchors.
    """

    config = config or TrainConfig(hyper=hyper, encoder=state.online.config)
    velocity = {} if velocity is None else velocity
    gate = gate or LabelGate()
    alpha, beta = config.weights_at(epoch)
    use_centroids = beta > 0.0
    dim = state.online.config.d2

    batches = make_batches(dataset, hyper.batch_size, make_rng(hyper.seed, _BATCH_STREAM, epoch),
                           config.labeled_batch_fraction)
    negative_rng = make_rng(hyper.seed, _NEGATIVE_STREAM, epoch)

    scl_values, centroid_values, total_values = [], [], []
    for batch in batches:
        cache = forward_batch(state.online, [s.image for s in batch])
        grad_z = np.zeros_like(cache.z)

        for i, sample in enumerate(batch):
            scl = centroid = LossOutput.zero(dim)
            if sample.split_role == SplitRole.LABELED:
                scl = scl_loss(cache.z[i], gate.label_of(sample), banks.rep_bank, hyper.tau)
                scl_values.append(scl.value)
            if use_centroids:
                centroid = _centroid_term(cache.z[i], banks.centroid_bank, hyper, config, negative_rng)
                centroid_values.append(centroid.value)
            combined = total_loss(scl, centroid, alpha, beta)
            grad_z[i] = combined.grad_z
            total_values.append(combined.value)

        grads = backward(state.online, cache, grad_z / len(batch))
        sgd_step(state.online, grads, hyper.lr, hyper.weight_decay, hyper.sgd_momentum, velocity)
        state.step_count += 1
        momentum_update(state, hyper.momentum_coef)

        labeled = [s for s in batch if s.split_role == SplitRole.LABELED]
        if labeled:
            momentum_z = forward_batch(state.momentum, [s.image for s in labeled]).z
            for sample, z in zip(labeled, momentum_z):
                banks.rep_bank.enqueue(gate.label_of(sample), z)
        banks.rep_bank.check_lengths()

    def mean(values):
        return float(np.mean(values)) if values else 0.0

    return EpochStats(epoch=epoch, batches=len(batches), labeled_anchors=len(scl_values),
                      unlabeled_anchors=len(total_values) - len(scl_values), scl=mean(scl_values),
                      centroid=mean(centroid_values), total=mean(total_values))


def train(config: TrainConfig, dataset: DatasetSplit | None = None, resume=False) -> TrainResult:
    """
    Runs preparation, then per epoch: train_epoch, re-extraction with the momentum encoder, re-clustering
    and an atomic checkpoint. History lines are appended to <checkpoint_dir>/history.jsonl.

    Args:
        config (TrainConfig): Run settings.
        dataset (DatasetSplit): Loaded from config.dataset when omitted.
        resume (bool): Continue from the latest complete epoch in checkpoint_dir.

    Returns:
        TrainResult
    """

    dataset = dataset if dataset is not None else load_split(config.dataset)
    hyper = config.hyper
    default_logger.info(f"\tTraining mode={config.mode} for {hyper.epochs} epochs (seed {hyper.seed})")

    if config.mode == "ce_baseline":
        return _train_parametric(config, dataset)

    gate = LabelGate()
    history, velocity, start_epoch = [], {}, 0
    if resume and config.checkpoint_dir and checkpoint.latest(config.checkpoint_dir):
        restored = checkpoint.load(checkpoint.latest(config.checkpoint_dir))
        state, velocity, history = restored.state, restored.velocity, restored.history
        banks = Banks(restored.rep_bank, restored.centroid_bank)
        start_epoch = restored.epoch + 1
        checkpoint.rewrite_history(config.checkpoint_dir, history)
        default_logger.info(f"\tResuming after epoch {restored.epoch}")
    else:
        state = EncoderState.create(config.encoder, hyper.seed)
        rep_bank, centroid_bank, _ = prepare(dataset, state, hyper, config, gate)
        banks = Banks(rep_bank, centroid_bank)
        if config.checkpoint_dir:
            checkpoint.rewrite_history(config.checkpoint_dir, [])

    if config.mode == "untrained":
        if config.checkpoint_dir:
            checkpoint.save(config.checkpoint_dir, 0, state, banks.rep_bank, banks.centroid_bank, config, [],
                            velocity)
        return TrainResult(state, banks.centroid_bank, [], banks.rep_bank, velocity=velocity)

    for epoch in range(start_epoch, hyper.epochs):
        started = time.time()
        stats = train_epoch(state, banks, dataset, hyper, config, epoch, velocity, gate)

        if (epoch + 1) % config.recluster_every == 0 or epoch + 1 == hyper.epochs:
            cache = extract_rep_cache(state, list(dataset.training))
            banks.centroid_bank = recluster(cache, hyper, config)
            stats.reclustered = True

        history.append(stats.as_dict())
        default_logger.info(f"\t\tEpoch {epoch}: total {stats.total:.4f}, scl {stats.scl:.4f}, "
                            f"centroid {stats.centroid:.4f} ({time.time() - started:.1f}s)")
        if config.checkpoint_dir:
            append_json_line(stats.as_dict(), checkpoint.history_path(config.checkpoint_dir))
            checkpoint.save(config.checkpoint_dir, epoch, state, banks.rep_bank, banks.centroid_bank, config,
                            history, velocity)

    return TrainResult(state, banks.centroid_bank, history, banks.rep_bank, velocity=velocity)


def _train_parametric(config: TrainConfig, dataset: DatasetSplit) -> TrainResult:
    """Cross-entropy baseline; banks are still built afterwards so evaluation sees the same artifacts."""

    gate = LabelGate()
    state, head, history = train_ce_baseline(config, dataset, gate=gate)
    rep_bank, centroid_bank, _ = prepare(dataset, state, config.hyper, config, gate)

    if config.checkpoint_dir:
        checkpoint.rewrite_history(config.checkpoint_dir, history)
        checkpoint.save(config.checkpoint_dir, config.hyper.epochs - 1, state, rep_bank, centroid_bank, config,
                        history, {}, head=head)

    return TrainResult(state, centroid_bank, history, rep_bank, head=head)
