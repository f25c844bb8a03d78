import os
import tempfile

os.environ.setdefault("OWSOL_LOG_FILE", os.path.join(tempfile.gettempdir(), "owsol-tests.log"))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.domain import (Box, Category, CategoryTaxonomy, DatasetSplit, HyperParams, Role, Sample,  # noqa: E402
                         SplitRole, ToyImage)
from encoder.encoder_class import EncoderConfig, EncoderState  # noqa: E402
from synthgen.generator import GenConfig, generate_dataset  # noqa: E402
from trainer.config import TrainConfig  # noqa: E402


def make_sample(sample_id, label, split_role=SplitRole.UNLABELED, side=4, box=(0, 0, 2, 2), data=None):
    image = ToyImage.from_array(np.zeros((side, side)) if data is None else data)
    return Sample(sample_id, image, label, (Box(*box),), split_role)


@pytest.fixture
def small_taxonomy():
    """3 Known (families 0, 0, 1), 1 NovS (family 1), 1 NovD (family 2)."""
    return CategoryTaxonomy((
        Category(0, 0, Role.KNOWN),
        Category(1, 0, Role.KNOWN),
        Category(2, 1, Role.KNOWN),
        Category(3, 1, Role.NOVS),
        Category(4, 2, Role.NOVD),
    ))


@pytest.fixture
def small_split(small_taxonomy):
    labeled = [make_sample(f"l{c}", c, SplitRole.LABELED) for c in (0, 1, 2)]
    unlabeled = [make_sample(f"u{c}", c) for c in range(5)]
    test = [make_sample(f"t{c}", c, SplitRole.TEST) for c in range(5)]
    return DatasetSplit(labeled, unlabeled, [], test, small_taxonomy)


@pytest.fixture(scope="session")
def tiny_gen_config():
    return GenConfig(n_known=3, n_nov_s=1, n_nov_d=1, samples_per_class=8, image_side=8, noise_std=0.02,
                     distractor_prob=0.0, val_per_class=1, test_per_class=3, seed=0)


@pytest.fixture(scope="session")
def tiny_split(tiny_gen_config):
    return generate_dataset(tiny_gen_config)


@pytest.fixture
def encoder_config():
    return EncoderConfig(image_side=8, channels=1, patch_size=2, d1=8, d_hidden=8, d2=6)


@pytest.fixture
def tiny_state(encoder_config):
    return EncoderState.create(encoder_config, seed=0)


@pytest.fixture
def tiny_hyper():
    return HyperParams(n_z=3, n_c=8, l_pos=2, batch_size=8, epochs=2, lr=0.01, momentum_coef=0.9, seed=0)


@pytest.fixture
def tiny_train_config(tiny_hyper, encoder_config, tmp_path):
    return TrainConfig(hyper=tiny_hyper, encoder=encoder_config, checkpoint_dir=str(tmp_path / "run"),
                       kmeans_iters=20, kmeans_inits=1)


@pytest.fixture
def unit_rows():
    def make(n, d, seed=0):
        rows = np.random.default_rng(seed).normal(size=(n, d))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)
    return make
