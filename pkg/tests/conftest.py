import json
from pathlib import Path

import numpy as np
import pytest

from hirescascade.schedule import make_schedule

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def goldens() -> dict:
    return json.loads((DATA / "goldens.json").read_text())


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(1000, 0.00085, 0.012, "scaled_linear")


@pytest.fixture
def rs() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_dit(tmp_path_factory):
    """Toy DiT trained 2000 steps on synthetic scenes (deterministic, ~3 min)."""
    from hirescascade.models import checkpoint
    from hirescascade.models.dit import TinyDiT
    from hirescascade.models.training import TrainSettings, train_denoiser

    model = TinyDiT()
    losses = train_denoiser(model, make_schedule(1000, 0.00085, 0.012, "scaled_linear"), TrainSettings(steps=2000))
    path = tmp_path_factory.mktemp("dit") / "base.cskt"
    checkpoint.save(path, model.params, model.meta())
    model.losses = losses
    model.checkpoint_path = path
    return model
