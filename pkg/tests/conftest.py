import numpy as np
import pytest

from limlsel.dgp import ScenarioConfig, ScenarioId, generate
from limlsel.modelspace import Dataset, TreatmentKind


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo acceptance tests (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def data_dir(tmp_path, monkeypatch):
    """Keep calibration caches out of the repository."""
    path = tmp_path / "data"
    monkeypatch.setenv("LIMLSEL_DATA_DIR", str(path))
    return path


@pytest.fixture
def continuous_data():
    config = ScenarioConfig(ScenarioId.S1, TreatmentKind.CONTINUOUS, n=300, seed=11)
    return generate(config, 1)


@pytest.fixture
def dichotomous_data():
    config = ScenarioConfig(ScenarioId.S1, TreatmentKind.DICHOTOMOUS, n=300, seed=11)
    return generate(config, 1)


def make_dataset(kind=TreatmentKind.CONTINUOUS, n=10, seed=0, **columns) -> Dataset:
    """Small random dataset; keyword columns override the random draws."""
    rng = np.random.default_rng(seed)
    base = {
        "y": rng.integers(0, 2, n).astype(float),
        "w": rng.integers(0, 2, n).astype(float) if kind is TreatmentKind.DICHOTOMOUS else rng.normal(size=n),
        "x1": rng.normal(size=n),
        "x2": rng.integers(0, 2, n).astype(float),
        "x3": rng.normal(size=n),
        "z": rng.integers(0, 2, n).astype(float),
    }
    base.update(columns)
    return Dataset(treatment_kind=kind, **base)
