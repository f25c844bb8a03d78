"""Libraries for artifact persistence: OWT1 tensors, tables, heatmaps"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from core.errors import TensorFormatError
from libraries.utils import default_logger

MAGIC = b"OWT1"


def atomic_write_bytes(path, payload: bytes) -> str:
    """Write bytes to a temp file in the target directory, then rename over the target."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise

    return str(path)


def encode_tensor(array) -> bytes:
    """Serialise an array as OWT1: magic, u8 ndim, u32 extents, float32 payload, all little-endian."""

    array = np.asarray(array)
    if array.ndim > 255:
        raise TensorFormatError(f"Too many dimensions: {array.ndim}")
    if not np.all(np.isfinite(array)):
        raise TensorFormatError("Refusing to write non-finite values")

    header = MAGIC + struct.pack("<B", array.ndim) + np.asarray(array.shape, dtype="<u4").tobytes()
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(payload: bytes) -> np.ndarray:
    """Parse OWT1 bytes into a float32 array."""

    if len(payload) < 5 or payload[:4] != MAGIC:
        raise TensorFormatError("Missing OWT1 magic")
    ndim = payload[4]
    offset = 5 + 4 * ndim
    if len(payload) < offset:
        raise TensorFormatError("Truncated OWT1 header")
    dims = tuple(int(d) for d in np.frombuffer(payload[5:offset], dtype="<u4"))
    count = int(np.prod(dims, dtype=np.int64))
    if len(payload) != offset + 4 * count:
        raise TensorFormatError(f"OWT1 payload has {len(payload) - offset} bytes, expected {4 * count}")

    data = np.frombuffer(payload[offset:], dtype="<f4").astype(np.float32).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise TensorFormatError("OWT1 payload holds non-finite values")

    return data


def save_tensor(array, path) -> str:
    return atomic_write_bytes(path, encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def save_json(dictionary: dict, path) -> str:
    """Save dictionary content to a json file (sorted keys, so reruns are byte-identical)"""

    payload = json.dumps(dictionary, indent=2, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return atomic_write_bytes(path, payload + b"\n")


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def append_json_line(dictionary: dict, path) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(dictionary, sort_keys=True) + "\n")


def save_table(df: pd.DataFrame, out_dir, table_name: str) -> str:
    """Save df as <out_dir>/<table_name>.csv"""

    path = Path(out_dir) / f"{table_name.lower()}.csv"
    atomic_write_bytes(path, df.to_csv(index=False, float_format="%.6f").encode("utf-8"))
    default_logger.info(f"\tSaved table {path} with shape {df.shape}")

    return str(path)


def save_pgm(normalized, path) -> str:
    """Write a [0, 1] heatmap as a binary PGM (P5, maxval 255)"""

    normalized = np.clip(np.asarray(normalized, dtype=np.float64), 0.0, 1.0)
    height, width = normalized.shape
    pixels = np.round(normalized * 255.0).astype(np.uint8)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")

    return atomic_write_bytes(path, header + pixels.tobytes())
