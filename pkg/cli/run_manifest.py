from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field
from pathlib import Path

from libraries.io_utils import save_json
from libraries.utils import get_version

MANIFEST_NAME = "run_manifest.json"


@dataclass
class RunManifest:
    """One per output directory: what ran, with which settings, and what it wrote."""

    command: str
    config: dict
    seed: int
    version: str = field(default_factory=get_version)
    started_at: str = field(default_factory=lambda: dt.datetime.now().isoformat(timespec="seconds"))
    finished_at: str | None = None
    artifacts: list = field(default_factory=list)

    def add(self, *paths) -> None:
        self.artifacts.extend(str(p) for p in paths if p)

    def write(self, out_dir) -> str:
        self.finished_at = dt.datetime.now().isoformat(timespec="seconds")
        return save_json(asdict(self), Path(out_dir) / MANIFEST_NAME)
