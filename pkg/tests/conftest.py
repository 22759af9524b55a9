import pytest
from typer.testing import CliRunner
from unittest.mock import MagicMock

import numpy as np

from medvt.core.tensor import ops
from medvt.core.tensor.rng import make_rng
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.infrastructure.config.settings import reset_configuration


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def runner():
    """Provides a Typer CliRunner instance."""
    return CliRunner()


@pytest.fixture
def mock_ui():
    return MagicMock(spec=UserInterface)


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(autouse=True)
def clean_configuration(monkeypatch):
    """Every test starts from defaults: no config file, no MEDVT_ env, ordered sums."""
    monkeypatch.delenv("MEDVT_CONFIG", raising=False)
    reset_configuration()
    ops.set_summation_mode("ordered")
    yield
    reset_configuration()
    ops.set_summation_mode("ordered")


@pytest.fixture
def tiny_clip(rng):
    """A 4-frame 32x32 clip with a bright square moving right by 2 px per frame."""
    frames = rng.random((4, 32, 32, 3)) * 0.2
    masks = np.zeros((4, 32, 32), dtype=np.int64)
    for t in range(4):
        masks[t, 10:18, 6 + 2 * t:14 + 2 * t] = 1
        frames[t][masks[t] == 1] = 0.9
    return frames, masks
