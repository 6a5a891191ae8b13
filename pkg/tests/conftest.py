import pytest

from core.models import SimConfig
from core.seeds import SeedSchedule
from core.sim_config import validate_config


@pytest.fixture
def schedule():
    return SeedSchedule(1234, "tests")


@pytest.fixture
def rng(schedule):
    return schedule.stream(0)


@pytest.fixture
def small_config():
    """d=2 world small enough for unit tests."""
    return validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=2.0, step=0.05, n_samples=40))
