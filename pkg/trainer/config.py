from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

from cluster.kmeans import PHI_FLOOR, KMeansConfig
from core.domain import HyperParams
from core.errors import ConfigInvalid
from encoder.encoder_class import EncoderConfig

MODES = ("colearn", "scl_only", "scl_ocl", "ce_baseline", "untrained")


@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes:
        hyper (HyperParams): Loss and optimizer knobs.
        encoder (EncoderConfig): Encoder shapes.
        dataset (str): Dataset directory.
        checkpoint_dir (str): Run output directory.
        recluster_every (int): Rebuild the centroid bank every this many epochs (and after the last one).
        mode (str): colearn, scl_only, scl_ocl, ce_baseline or untrained.
        labeled_batch_fraction (float): Share of labeled anchors per batch; None keeps dataset proportions.
        mcl_pos_temperature (bool): Divide the multi-centroid positive by the mean density of its centroids.
        centroid_warmup (int): Leading epochs trained on the supervised term alone; the centroid term joins after.
    """

    hyper: HyperParams = field(default_factory=HyperParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dataset: str = ""
    checkpoint_dir: str = ""
    recluster_every: int = 1
    mode: str = "colearn"
    labeled_batch_fraction: Optional[float] = None
    phi_floor: float = PHI_FLOOR
    kmeans_iters: int = 100
    kmeans_inits: int = 4
    mcl_pos_temperature: bool = False
    centroid_warmup: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.recluster_every < 1:
            raise ConfigInvalid("recluster_every must be >= 1")
        if self.labeled_batch_fraction is not None and not 0.0 < self.labeled_batch_fraction < 1.0:
            raise ConfigInvalid(f"labeled_batch_fraction must lie in (0, 1), got {self.labeled_batch_fraction}")
        if not self.phi_floor > 0:
            raise ConfigInvalid("phi_floor must be > 0")
        if self.centroid_warmup < 0:
            raise ConfigInvalid(f"centroid_warmup must be >= 0, got {self.centroid_warmup}")

    @property
    def kmeans(self) -> KMeansConfig:
        return KMeansConfig(max_iters=self.kmeans_iters, n_init=self.kmeans_inits, seed=self.hyper.seed)

    @property
    def loss_weights(self) -> tuple:
        """(weight of the supervised term, weight of the centroid term) for the mode."""
        if self.mode == "scl_only":
            return self.hyper.alpha, 0.0
        return self.hyper.alpha, self.hyper.beta

    def weights_at(self, epoch) -> tuple:
        """loss_weights, with the centroid weight at 0 during the warm-up epochs."""
        alpha, beta = self.loss_weights
        return (alpha, beta) if epoch >= self.centroid_warmup else (alpha, 0.0)

    def as_dict(self) -> dict:
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("hyper", "encoder")}
        return {**values, "hyper": self.hyper.as_dict(), "encoder": self.encoder.as_dict()}
