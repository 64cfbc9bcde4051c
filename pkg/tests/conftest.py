import numpy as np
import pytest

from ffns.fields import Grid
from ffns.stepper import SimParams

# acceptance verdicts, filled by tests/test_acceptance.py
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])


@pytest.fixture(scope="session")
def small_grid():
    return Grid(2 * np.pi, 16, 17, 1.0)


@pytest.fixture(scope="session")
def grid():
    return Grid(2 * np.pi, 32, 33, 1.0)


@pytest.fixture
def small_params():
    return SimParams(ny=16, nz=17, dt=2e-3, cfl=50.0, epsilon=1e-2, sigma=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
