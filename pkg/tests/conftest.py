from pathlib import Path

import numpy as np
import pytest

from oeduu.darcy import UncertainSample, draw_sample
from oeduu.grid_prior import Grid, build_prior
from oeduu.transport import ForwardOperator, SensorNetwork, TransportConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(11, 11, 1.5, 1.0)


@pytest.fixture(scope="session")
def small_prior(small_grid):
    return build_prior(small_grid, 0.008, 0.02)


@pytest.fixture(scope="session")
def theta_prior_small(small_grid):
    return build_prior(small_grid, 0.005, 0.05, np.full(small_grid.n, -2.7))


@pytest.fixture(scope="session")
def small_config():
    return TransportConfig(kappa=1e-3, t1=16.0, n_steps=40)


@pytest.fixture(scope="session")
def small_sensors(small_grid):
    return SensorNetwork.lattice(small_grid, (4, 3), (0.15, 0.15))


@pytest.fixture(scope="session")
def small_ops(small_grid, theta_prior_small, small_config, small_sensors):
    return [
        ForwardOperator(small_grid, draw_sample(theta_prior_small, (-1, 1), [99, i]),
                        small_config, small_sensors)
        for i in range(4)
    ]


def still_sample(grid, t0=0.0):
    """Zero-velocity sample."""
    z = np.zeros(grid.n)
    return UncertainSample(grid, z, z.copy(), z.copy(), t0)


CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# (criterion, passed, detail) tuples filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
