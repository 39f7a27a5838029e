import numpy as np
import pytest

from rnnchaos.dynamics import SimConfig, lorenz, rescale_to_unit_cube, simulate


@pytest.fixture(scope="session")
def lorenz_traj():
    """Rescaled Lorenz signal sampled at dt = 2e-2 (40001 samples)."""
    raw = simulate(lorenz(), SimConfig(dt_integrate=1e-3, n_steps=20 * 40_000, skip=1000,
                                       subsample_stride=20, seed=1))
    return rescale_to_unit_cube(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance criteria report one line each in the terminal summary
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
