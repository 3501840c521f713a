"""Shared test fixtures for vega-align."""

import numpy as np
import pytest

from vega_align.config import DataConfig, EncoderConfig, Fit3dConfig, TrainConfig
from vega_align.dataset import build_dataset
from vega_align.encoder import init_encoder
from vega_align.rng import Xoshiro256


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-schedule acceptance runs")


@pytest.fixture
def rng():
    """Seeded generator for test inputs."""
    return Xoshiro256(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_encoder_config():
    """8x8 images, 2x2 patch grid, d=8, two blocks."""
    return EncoderConfig(
        image_size=8, patch_size=4, channels=3, embed_dim=8, num_blocks=2, num_heads=2, mlp_ratio=2
    )


@pytest.fixture(scope="session")
def tiny_data_config():
    """Few scenes, focal length scaled to the 8-pixel image."""
    return DataConfig(train_scenes=8, eval_scenes=4, grid_size=16, focal_length=10.0, seed=3)


@pytest.fixture(scope="session")
def tiny_train_config(tiny_encoder_config, tiny_data_config):
    return TrainConfig(
        steps=12,
        batch_size=2,
        learning_rate=1e-3,
        decay_step=6,
        align_lambda=0.1,
        eval_interval=4,
        encoder=tiny_encoder_config,
        data=tiny_data_config,
        fit3d=Fit3dConfig(steps=10, batch_size=2, learning_rate=1e-2, log_interval=5),
    )


@pytest.fixture(scope="session")
def train_split(tiny_data_config, tiny_encoder_config):
    return build_dataset(tiny_data_config, tiny_encoder_config, "train")


@pytest.fixture(scope="session")
def eval_easy_split(tiny_data_config, tiny_encoder_config):
    return build_dataset(tiny_data_config, tiny_encoder_config, "eval_easy")


@pytest.fixture(scope="session")
def eval_hard_split(tiny_data_config, tiny_encoder_config):
    return build_dataset(tiny_data_config, tiny_encoder_config, "eval_hard")


@pytest.fixture
def teacher(tiny_encoder_config):
    """A frozen random encoder standing in for the fine-tuned teacher."""
    return init_encoder(tiny_encoder_config, seed=99).copy(frozen=True)


@pytest.fixture
def student(tiny_encoder_config):
    return init_encoder(tiny_encoder_config, seed=7)
