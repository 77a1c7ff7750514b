import os
import tempfile
from pathlib import Path

os.environ.setdefault('MOBILITY_LOG_DIR', str(Path(tempfile.gettempdir()) / 'mobility-test-logs'))

import numpy as np
import pytest

from mobility.config import ModelConfig, TrainConfig
from mobility.core.trajectory import GridSpec
from mobility.data.synthetic import generate_synthetic


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(
        d_model=16, tod_dim=8, dow_dim=8, loc_dim=8, coord_dim=8, heads=4,
        intra_layers=1, inter_layers=1, dropout=0.0, grid_width=10, grid_height=10, top_k=5,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(
        learning_rate=5e-3, weight_decay=0.0, batch_size=4, epochs=2, seed=0,
        model=tiny_model_config(), backbone='frozen-random:1:2',
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def grid():
    return GridSpec(10, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def model_config():
    return tiny_model_config()


@pytest.fixture
def train_config():
    return tiny_train_config()


@pytest.fixture
def small_dataset(grid):
    """3 users, 14 days, fully observed routines"""
    return generate_synthetic(users=3, days=14, noise=0.0, seed=1, grid=grid, dropout=0.0)
