"""Per-epoch checkpoints: OWT1 tensor per parameter plus a JSON header, written to a temp dir then renamed"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from banks.centroid_bank import CentroidBank
from banks.rep_bank import RepBank
from core.domain import HyperParams
from core.errors import ConfigError
from encoder.encoder_class import PARAM_NAMES, EncoderConfig, EncoderParams, EncoderState
from libraries.io_utils import atomic_write_bytes, load_json, load_tensor, save_json, save_tensor
from libraries.utils import default_logger, hash_dict
from trainer.ce_baseline import CEHead
from trainer.config import TrainConfig

FORMAT = "owsol-checkpoint-1"
HEADER_NAME = "checkpoint.json"
LATEST_NAME = "LATEST"
HISTORY_NAME = "history.jsonl"


@dataclass
class Checkpoint:
    path: str
    epoch: int
    state: EncoderState
    rep_bank: RepBank
    centroid_bank: CentroidBank
    history: list
    header: dict
    velocity: dict = field(default_factory=dict)
    head: object = None


def history_path(run_dir) -> str:
    return str(Path(run_dir) / HISTORY_NAME)


def rewrite_history(run_dir, history: list) -> None:
    lines = "".join(json.dumps(row, sort_keys=True) + "\n" for row in history)
    atomic_write_bytes(history_path(run_dir), lines.encode("utf-8"))


def _save_params(tensors: dict, directory: Path) -> None:
    for name, array in tensors.items():
        save_tensor(array, directory / f"{name}.owt")


def _load_params(directory: Path, names) -> dict:
    return {name: load_tensor(directory / f"{name}.owt").astype(np.float64) for name in names
            if (directory / f"{name}.owt").is_file()}


def save(run_dir, epoch: int, state: EncoderState, rep_bank: RepBank, centroid_bank: CentroidBank, config,
         history: list, velocity: dict, head=None) -> str:
    """
    Writes <run_dir>/checkpoints/epoch-NNNN atomically and points LATEST at it.

    Returns:
        str: The checkpoint directory.
    """

    root = Path(run_dir) / "checkpoints"
    name = f"epoch-{epoch:04d}"
    final, tmp = root / name, root / f".{name}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    _save_params(state.online.tensors, tmp / "online")
    _save_params(state.momentum.tensors, tmp / "momentum")
    _save_params(velocity, tmp / "velocity")
    rep_bank.save(tmp)
    centroid_bank.save(tmp)
    if head is not None:
        save_tensor(head.w, tmp / "head_w.owt")
        save_tensor(head.bias, tmp / "head_b.owt")

    hyper = config.hyper.as_dict()
    header = {
        "format": FORMAT,
        "epoch": epoch,
        "step_count": state.step_count,
        "shapes": {k: list(v.shape) for k, v in state.online.tensors.items()},
        "config": config.as_dict(),
        "hyper_hash": hash_dict(hyper),
        "history": history,
        "head_classes": list(head.class_ids) if head is not None else None,
    }
    save_json(header, tmp / HEADER_NAME)

    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    atomic_write_bytes(root / LATEST_NAME, name.encode("ascii"))
    default_logger.info(f"\tSaved checkpoint {final}")

    return str(final)


def latest(run_dir) -> str | None:
    marker = Path(run_dir) / "checkpoints" / LATEST_NAME
    if not marker.is_file():
        return None
    return str(marker.parent / marker.read_text(encoding="ascii").strip())


def resolve(path) -> str:
    """Accepts a checkpoint directory or a run directory (its latest checkpoint)."""

    path = Path(path)
    if (path / HEADER_NAME).is_file():
        return str(path)
    found = latest(path)
    if found and (Path(found) / HEADER_NAME).is_file():
        return found
    raise ConfigError(f"No checkpoint found at {path}")


def config_from_header(header: dict):
    values = dict(header["config"])
    hyper = HyperParams(**values.pop("hyper"))
    encoder = EncoderConfig(**values.pop("encoder"))
    return TrainConfig(hyper=hyper, encoder=encoder, **values)


def load(path) -> Checkpoint:
    """
    Restores a checkpoint written by save.

    Raises:
        ConfigError: If the directory holds no checkpoint or its header does not match the tensors.
        TensorFormatError: If a tensor file is corrupt.
    """

    directory = Path(resolve(path))
    header = load_json(directory / HEADER_NAME)
    if header.get("format") != FORMAT:
        raise ConfigError(f"Unsupported checkpoint format in {directory}: {header.get('format')!r}")

    config = config_from_header(header)
    if hash_dict(config.hyper.as_dict()) != header["hyper_hash"]:
        raise ConfigError(f"Hyper-parameter hash mismatch in {directory}")

    online = EncoderParams(config.encoder, _load_params(directory / "online", PARAM_NAMES))
    momentum = EncoderParams(config.encoder, _load_params(directory / "momentum", PARAM_NAMES))
    for params in (online, momentum):
        params.check()
    state = EncoderState(online, momentum, step_count=int(header["step_count"]))

    head = None
    if header.get("head_classes"):
        head = CEHead(load_tensor(directory / "head_w.owt").astype(np.float64),
                      load_tensor(directory / "head_b.owt").astype(np.float64), header["head_classes"])

    return Checkpoint(path=str(directory), epoch=int(header["epoch"]), state=state,
                      rep_bank=RepBank.load(directory), centroid_bank=CentroidBank.load(directory),
                      history=header["history"], header=header,
                      velocity=_load_params(directory / "velocity", PARAM_NAMES), head=head)
