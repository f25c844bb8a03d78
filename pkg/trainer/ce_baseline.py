"""Parametric baseline: encoder plus a linear head trained with cross-entropy on labeled data only"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from core.domain import DatasetSplit, LabelGate
from core.errors import ShapeMismatch
from encoder.encoder_class import EncoderState, backward_pooled, forward_batch, momentum_update, sgd_step
from libraries.utils import default_logger, make_rng

_HEAD_STREAM = 0xCE


@dataclass
class CEHead:
    """
    Attributes:
        w (np.ndarray): (d1, k) class weights; column j is the CAM weight of class_ids[j].
        bias (np.ndarray): (k,) biases.
        class_ids (list): Known class id of each column.
    """

    w: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    class_ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.w.ndim != 2 or self.bias.shape != (self.w.shape[1],) or len(self.class_ids) != self.w.shape[1]:
            raise ShapeMismatch(f"Head weights {self.w.shape}, bias {self.bias.shape} and "
                                f"{len(self.class_ids)} classes do not agree")

    @property
    def k(self) -> int:
        return self.w.shape[1]

    @classmethod
    def create(cls, d1: int, class_ids, seed: int) -> "CEHead":
        bound = 1.0 / np.sqrt(d1)
        rng = make_rng(seed, _HEAD_STREAM)
        return cls(rng.uniform(-bound, bound, size=(d1, len(class_ids))), np.zeros(len(class_ids)),
                   list(class_ids))

    def logits(self, pooled) -> np.ndarray:
        return np.asarray(pooled, dtype=np.float64) @ self.w + self.bias

    def predict(self, pooled) -> np.ndarray:
        """Class ids of the argmax logits."""
        return np.asarray(self.class_ids)[np.argmax(np.atleast_2d(self.logits(pooled)), axis=1)]

    def weight_of(self, class_id) -> np.ndarray:
        return self.w[:, self.class_ids.index(class_id)]


def ce_loss(logits, targets):
    """
    Mean softmax cross-entropy.

    Returns:
        tuple: (value, gradient w.r.t. logits).
    """

    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    batch = logits.shape[0]
    value = float(-log_softmax(logits, axis=1)[np.arange(batch), targets].mean())
    grad = softmax(logits, axis=1)
    grad[np.arange(batch), targets] -= 1.0

    return value, grad / batch


def train_ce_baseline(config, dataset: DatasetSplit, state: EncoderState | None = None,
                      gate: LabelGate | None = None):
    """
    Trains encoder and head on pooled features of D_l; unlabeled samples are never read.

    Args:
        config (TrainConfig): Optimizer knobs and encoder shapes.
        dataset (DatasetSplit): Only dataset.labeled is used.
        state (EncoderState): Starting weights; a seeded encoder when omitted.
        gate (LabelGate): Label access gate recording every id read.

    Returns:
        tuple: (EncoderState, CEHead, history)
    """

    hyper = config.hyper
    gate = gate or LabelGate()
    state = state or EncoderState.create(config.encoder, hyper.seed)
    class_ids = list(dataset.taxonomy.known_ids)
    column = {c: j for j, c in enumerate(class_ids)}
    head = CEHead.create(state.online.config.d1, class_ids, hyper.seed)

    labeled = list(dataset.labeled)
    targets = np.asarray([column[gate.label_of(s)] for s in labeled], dtype=np.int64)
    default_logger.info(f"\tTraining parametric baseline on {len(labeled)} labeled samples, {head.k} classes")

    velocity, head_velocity, history = {}, {}, []
    for epoch in range(hyper.epochs):
        order = make_rng(hyper.seed, _HEAD_STREAM, epoch).permutation(len(labeled))
        losses, correct = [], 0
        for start in range(0, len(order), hyper.batch_size):
            index = order[start:start + hyper.batch_size]
            cache = forward_batch(state.online, [labeled[i].image for i in index])
            logits = head.logits(cache.pooled)
            value, grad_logits = ce_loss(logits, targets[index])
            losses.append(value)
            correct += int(np.sum(np.argmax(logits, axis=1) == targets[index]))

            head_grads = {"w": cache.pooled.T @ grad_logits, "bias": grad_logits.sum(axis=0)}
            grads = backward_pooled(state.online, cache, grad_logits @ head.w.T)
            sgd_step(state.online, grads, hyper.lr, hyper.weight_decay, hyper.sgd_momentum, velocity)
            head_tensors = {"w": head.w, "bias": head.bias}
            sgd_step(head_tensors, head_grads, hyper.lr, hyper.weight_decay, hyper.sgd_momentum, head_velocity)
            head.w, head.bias = head_tensors["w"], head_tensors["bias"]
            state.step_count += 1
            momentum_update(state, hyper.momentum_coef)

        stats = {"epoch": epoch, "ce": float(np.mean(losses)), "train_acc": correct / max(1, len(labeled))}
        history.append(stats)
        default_logger.info(f"\t\tEpoch {epoch}: ce {stats['ce']:.4f}, train acc {stats['train_acc']:.4f}")

    return state, head, history
