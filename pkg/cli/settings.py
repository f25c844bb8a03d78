"""Typed views over the key=value run configuration"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from core.domain import HyperParams
from core.errors import ConfigInvalid
from encoder.encoder_class import EncoderConfig
from gcam.localizer import CENTROID_SOURCES, DEFAULT_THETA, EVAL_SPACES
from libraries.config import build, check_keys, load_config
from synthgen.generator import GenConfig
from trainer.config import TrainConfig


@dataclass(frozen=True)
class EvalConfig:
    theta: float = DEFAULT_THETA
    eval_space: str = "feature"
    centroid_source: str = "test"
    k: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigInvalid(f"theta must lie in [0, 1], got {self.theta}")
        if self.eval_space not in EVAL_SPACES:
            raise ConfigInvalid(f"eval_space must be one of {EVAL_SPACES}")
        if self.centroid_source not in CENTROID_SOURCES:
            raise ConfigInvalid(f"centroid_source must be one of {CENTROID_SOURCES}")


@dataclass(frozen=True)
class ExperimentConfig:
    nc_grid: tuple[int, ...] = (16, 32, 64, 128)
    l_grid: tuple[int, ...] = (1, 5, 10, 15)
    experiment_seeds: tuple[int, ...] = (0, 1, 2)
    zeroshot_heldout_fraction: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.zeroshot_heldout_fraction < 1.0:
            raise ConfigInvalid("zeroshot_heldout_fraction must lie in (0, 1)")
        if not self.experiment_seeds:
            raise ConfigInvalid("experiment_seeds must name at least one seed")


CONFIG_CLASSES = (GenConfig, HyperParams, EncoderConfig, TrainConfig, EvalConfig, ExperimentConfig)


@dataclass(frozen=True)
class Settings:
    gen: GenConfig
    train: TrainConfig
    evaluation: EvalConfig
    experiment: ExperimentConfig


def read_values(path) -> dict:
    """Raw values of a config file, rejecting keys no config class declares; no path means defaults."""

    if path is None:
        return {}
    values = load_config(path)
    check_keys(values, *CONFIG_CLASSES)
    return values


def load_settings(path=None, seed=None, dataset=None, checkpoint_dir=None, image_side=None, channels=None,
                  mode=None) -> Settings:
    """
    Builds every config section from one file, with command-line overrides on top.

    Raises:
        ConfigError: Missing file, unknown key or uncastable value.
        ConfigInvalid: A value outside its valid range.
    """

    values = read_values(path)

    gen = build(GenConfig, values)
    hyper = build(HyperParams, values)
    if seed is not None:
        gen = replace(gen, seed=int(seed))
        hyper = replace(hyper, seed=int(seed))

    encoder_overrides = {k: v for k, v in (("image_side", image_side), ("channels", channels)) if v is not None}
    encoder = build(EncoderConfig, values, **encoder_overrides)

    train_overrides = {k: v for k, v in (("dataset", dataset), ("checkpoint_dir", checkpoint_dir), ("mode", mode))
                       if v is not None}
    train = build(TrainConfig, values, hyper=hyper, encoder=encoder, **train_overrides)

    return Settings(gen=gen, train=train, evaluation=build(EvalConfig, values),
                    experiment=build(ExperimentConfig, values))
