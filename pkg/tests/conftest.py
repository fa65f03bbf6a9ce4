import numpy as np
import pytest

from sparseg.config import PipelineConfig
from sparseg.phantom import make_phantom
from sparseg.training import train

TRAIN_SEEDS = (1, 2)
SUITE_SEEDS = (3, 7, 11)


@pytest.fixture(scope="session")
def trained():
    """Dictionaries learned from two phantoms with the default configuration."""
    cfg = PipelineConfig()
    return train([make_phantom(seed=s) for s in TRAIN_SEEDS], cfg)


@pytest.fixture(scope="session")
def models(trained):
    return trained.models


@pytest.fixture
def rng():
    return np.random.default_rng(0)
