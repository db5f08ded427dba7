import numpy as np
import pytest

from vecmap.config import default_config


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def seeded(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


@pytest.fixture
def tiny_config():
    """Smallest config the model accepts; grid and caps shrunk so a full
    forward costs milliseconds.  Not the paper layout."""
    cfg = default_config()
    cfg.model.channels = 8
    cfg.model.decoder_layers = 1
    cfg.model.grid_h = 10
    cfg.model.grid_w = 6
    cfg.model.caps = {"ped_crossing": 2, "divider": 2, "boundary": 2}
    cfg.model.points = {"ped_crossing": 3, "divider": 2, "boundary": 4}
    cfg.train.dtype = "float64"
    cfg.scene.dividers = (1, 2)
    cfg.scene.crossings = (0, 1)
    # gt polylines must stay inside the shrunken per-category point budgets
    cfg.scene.divider_pivots = (2, 2)
    cfg.scene.boundary_pivots = (3, 4)
    return cfg
