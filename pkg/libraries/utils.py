import hashlib
import json
import logging
import os
import subprocess

import numpy as np


def setup_logger(name, log_file, level=logging.INFO):
    """Function to set up a logger with the given name, log file, and level."""
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Handlers are attached once per process
    if logger.handlers:
        return logger

    # File handler
    file_handler = logging.FileHandler(log_file)
    file_handler.setFormatter(formatter)

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    return logger


# Set up default logger
default_logger = setup_logger('default_logger',
                              os.getenv("OWSOL_LOG_FILE", "owsol.log"),
                              level=os.getenv("OWSOL_LOG_LEVEL", "INFO").upper())


def make_rng(seed, *stream):
    """
    Builds a counter-based generator keyed by the seed and a stream path.

    Args:
        seed (int): The run seed.
        *stream (int): Extra integer keys (epoch, sample index, purpose tag ...).

    Returns:
        np.random.Generator: A Philox-backed generator; identical keys give identical draws
        no matter in which order the generators are created.
    """

    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def get_workers(requested=None):
    """Resolve the worker count from the flag or OWSOL_WORKERS, capped at the CPU count."""

    value = requested if requested is not None else os.getenv("OWSOL_WORKERS", "1")
    try:
        workers = int(value)
    except (TypeError, ValueError):
        default_logger.warning(f"Ignoring invalid worker count {value!r}, using 1")
        workers = 1

    return max(1, min(workers, os.cpu_count() or 1))


def hash_dict(values: dict) -> str:
    """Stable sha256 of a JSON-serialisable dict."""

    payload = json.dumps(values, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def get_version() -> str:
    """git-describe style version string, falling back to the package version."""

    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=5, check=True)
        return out.stdout.strip() or "0.1.0"
    except (OSError, subprocess.SubprocessError):
        return "0.1.0"
