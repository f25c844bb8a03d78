from __future__ import annotations

import os
from collections import deque

import numpy as np

from core.domain import LabelGate
from core.errors import EmptyClass, UnknownClass
from encoder.encoder_class import EncoderState, forward_batch
from libraries.io_utils import load_json, load_tensor, save_json, save_tensor
from libraries.utils import default_logger, make_rng


class RepBank:
    """
    Per-class FIFO queues of N_z unit-norm momentum representations.

    Snapshots returned by positives() and all() are copies; only the trainer mutates the queues.
    """

    def __init__(self, n_z: int, queues: dict) -> None:
        self.n_z = int(n_z)
        self.queues = {int(y): deque((np.asarray(z, dtype=np.float64) for z in entries), maxlen=self.n_z)
                       for y, entries in sorted(queues.items())}
        self.check_lengths()

    @property
    def class_ids(self) -> list:
        return list(self.queues)

    @property
    def dim(self) -> int:
        first = next(iter(self.queues.values()))
        return int(first[0].shape[0])

    def _queue(self, y) -> deque:
        queue = self.queues.get(int(y))
        if queue is None:
            raise UnknownClass(f"Class {y} has no queue in the representation bank")
        return queue

    def enqueue(self, y, z) -> None:
        """Appends z to the queue of y; the oldest entry falls out."""

        queue = self._queue(y)
        queue.append(np.array(getattr(z, "z", z), dtype=np.float64))

    def positives(self, y) -> np.ndarray:
        return np.stack(self._queue(y))

    def all(self) -> np.ndarray:
        """Every entry in (class, age) order: classes ascending, oldest first within a class."""
        return np.concatenate([np.stack(queue) for queue in self.queues.values()])

    def row_labels(self) -> np.ndarray:
        """Class id of each row of all()."""
        return np.repeat(np.asarray(self.class_ids, dtype=np.int64), self.n_z)

    def check_lengths(self) -> None:
        for y, queue in self.queues.items():
            if len(queue) != self.n_z:
                raise AssertionError(f"Queue of class {y} holds {len(queue)} entries, expected {self.n_z}")

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        save_tensor(self.all(), os.path.join(out_dir, "rep_bank.owt"))
        save_json({"n_z": self.n_z, "class_ids": self.class_ids}, os.path.join(out_dir, "rep_bank.json"))

    @classmethod
    def load(cls, out_dir) -> "RepBank":
        index = load_json(os.path.join(out_dir, "rep_bank.json"))
        rows = load_tensor(os.path.join(out_dir, "rep_bank.owt")).astype(np.float64)
        n_z = index["n_z"]
        queues = {y: rows[i * n_z:(i + 1) * n_z] for i, y in enumerate(index["class_ids"])}
        return cls(n_z, queues)


def init_rep_bank(labeled, encoder_state: EncoderState, n_z: int, known_ids=None, seed=0, reps=None,
                  gate: LabelGate | None = None) -> RepBank:
    """
    Fills one queue per known class with momentum-encoder representations of its labeled samples.

    Args:
        labeled (list): Labeled samples.
        encoder_state (EncoderState): Its momentum encoder produces the representations.
        n_z (int): Queue length.
        known_ids (list): Classes that need a queue; defaults to the labels present.
        seed (int): Seed for picking queue entries.
        reps (np.ndarray): Optional precomputed momentum representations aligned with labeled.
        gate (LabelGate): Label access gate; a fresh one is used when omitted.

    Returns:
        RepBank

    Raises:
        EmptyClass: If a known class has no labeled sample.
    """

    gate = gate or LabelGate()
    labels = np.asarray([gate.label_of(s) for s in labeled], dtype=np.int64)
    known_ids = sorted(set(labels.tolist())) if known_ids is None else sorted(int(y) for y in known_ids)

    missing = [y for y in known_ids if not np.any(labels == y)]
    if missing:
        raise EmptyClass(f"Known classes without labeled samples: {missing}")

    if reps is None:
        reps = forward_batch(encoder_state.momentum, [s.image for s in labeled]).z
    reps = np.asarray(reps, dtype=np.float64)

    rng = make_rng(seed, 0xB4)
    queues = {}
    for y in known_ids:
        members = np.flatnonzero(labels == y)
        replace = len(members) < n_z
        if replace:
            default_logger.warning(f"\tClass {y} has {len(members)} labeled samples, filling {n_z} slots "
                                   "with replacement")
        picked = rng.choice(members, size=n_z, replace=replace)
        queues[y] = reps[picked]

    default_logger.info(f"\tRepresentation bank: {len(queues)} classes x {n_z} entries")

    return RepBank(n_z, queues)
