from pathlib import Path

import pytest

from interaction import build_system
from textlang import load_model

MODELS_DIR = Path(__file__).resolve().parent.parent / "datasets" / "models"
BUNDLED = ["traffic_light", "mutex", "broken_mutex", "payload_hk", "cubeth_reduced"]


def model_path(name: str) -> Path:
    return MODELS_DIR / f"{name}.bip"


@pytest.fixture
def load():
    """Load a bundled model by name."""
    return lambda name: load_model(model_path(name))


@pytest.fixture
def system_of():
    """Build the executable system of a bundled model by name."""
    return lambda name: build_system(load_model(model_path(name)))
