import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from odegp.dynsys import Trajectory, TimeGrid, get_system, irregular_grid, regular_grid, simulate_reference

settings.register_profile(
    "default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def vdp_short():
    """Noiseless Van der Pol trajectory on a slightly irregular grid."""
    grid = irregular_grid(0.0, 40, 0.1, 0.5, seed=3)
    return simulate_reference(get_system("vdp"), (2.0, 0.0), grid)


@pytest.fixture(scope="session")
def dho_short():
    grid = regular_grid(0.0, 60, 0.02)
    return simulate_reference(get_system("dho"), (2.0, 0.0), grid)


def random_trajectory(rng, n=12, d=2, irregular=True):
    steps = rng.uniform(0.05, 0.15, n - 1) if irregular else np.full(n - 1, 0.1)
    t = np.concatenate([[0.0], np.cumsum(steps)])
    return Trajectory(TimeGrid(t), rng.normal(size=(n, d)))


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
