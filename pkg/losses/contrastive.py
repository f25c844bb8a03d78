"""Contrastive objectives over the representation and centroid banks, with analytic gradients w.r.t. the anchor"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from banks.centroid_bank import CentroidBank, nearest_indices
from banks.rep_bank import RepBank
from core.errors import ConfigInvalid


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_z: np.ndarray

    @classmethod
    def zero(cls, dim: int) -> "LossOutput":
        return cls(0.0, np.zeros(dim, dtype=np.float64))


def _anchor(z) -> np.ndarray:
    return np.asarray(getattr(z, "z", z), dtype=np.float64)


def _softmax_ce(logits, vectors, target_logit, target_vector) -> LossOutput:
    """-log of the target's softmax share, where logit_i = z . vectors[i] and the target is in the set."""

    value = float(logsumexp(logits) - target_logit)
    grad = softmax(logits) @ vectors - target_vector
    return LossOutput(max(value, 0.0), grad)


def scl_loss(z, y, bank: RepBank, tau: float) -> LossOutput:
    """
    Supervised contrastive loss of an anchor against every queue entry.

    value = logsumexp(z.P / tau) - mean over P(y) of (z.z+ / tau); the positives stay in the
    denominator.

    Raises:
        UnknownClass: If y has no queue.
    """

    if tau <= 0:
        raise ConfigInvalid(f"tau must be > 0, got {tau}")
    z = _anchor(z)
    positives = bank.positives(y)
    everything = bank.all()

    logits = everything @ z / tau
    pos_mean = positives.mean(axis=0)
    value = float(logsumexp(logits) - (positives @ z / tau).mean())
    grad = (softmax(logits) @ everything - pos_mean) / tau

    return LossOutput(max(value, 0.0), grad)


def ocl_loss(z, bank: CentroidBank) -> LossOutput:
    """Centroid contrast with per-centroid temperature phi; the nearest centroid is the positive."""

    z = _anchor(z)
    vectors = bank.centroids / bank.phi[:, None]
    logits = vectors @ z
    nearest = int(nearest_indices(bank.centroids, z, 1)[0, 0])

    return _softmax_ce(logits, vectors, logits[nearest], vectors[nearest])


def mcl_loss(z, bank: CentroidBank, l_pos: int, n_neg: int | None, rng, pos_temperature=False) -> LossOutput:
    """
    Multi-centroid contrast: the positive is c* = mean of c/phi over the L nearest centroids and
    n_neg negatives are drawn uniformly without replacement from the remaining centroids.

    The positive logit is z.c* with no further temperature. With pos_temperature the positive becomes
    z.mean(c) / mean(phi) over the same L centroids.

    Args:
        z: Anchor representation.
        bank (CentroidBank): Frozen centroids of the epoch.
        l_pos (int): Number of positive centroids L.
        n_neg (int): Sampled negatives; None uses every remaining centroid.
        rng (np.random.Generator): Negative sampler.
        pos_temperature (bool): Switches the positive-term temperature.

    Raises:
        ConfigInvalid: If l_pos < 1 or l_pos + n_neg > N_c.
    """

    z = _anchor(z)
    n_c = bank.n_c
    n_neg = n_c - l_pos if n_neg is None else int(n_neg)
    if l_pos < 1 or n_neg < 0 or l_pos + n_neg > n_c:
        raise ConfigInvalid(f"l_pos={l_pos} and n_neg={n_neg} do not fit into {n_c} centroids")

    order = nearest_indices(bank.centroids, z, n_c)[0]
    near, rest = order[:l_pos], order[l_pos:]
    if n_neg < len(rest):
        rest = np.sort(rng.choice(rest, size=n_neg, replace=False))
    if n_neg == 0:
        return LossOutput.zero(z.shape[0])

    if pos_temperature:
        positive = bank.centroids[near].mean(axis=0) / bank.phi[near].mean()
    else:
        positive = (bank.centroids[near] / bank.phi[near, None]).mean(axis=0)
    negatives = bank.centroids[rest] / bank.phi[rest, None]

    vectors = np.vstack([positive[None], negatives])
    logits = vectors @ z

    return _softmax_ce(logits, vectors, logits[0], positive)


def total_loss(scl: LossOutput, mcl: LossOutput, alpha=1.0, beta=0.5) -> LossOutput:
    return LossOutput(alpha * scl.value + beta * mcl.value, alpha * scl.grad_z + beta * mcl.grad_z)
