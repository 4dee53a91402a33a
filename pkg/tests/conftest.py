import numpy as np
import pytest

from fraccal.geometry import RegionMask
from fraccal.torus import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(10.0, 128)


@pytest.fixture(scope="session")
def ref_grid():
    return GridSpec(10.0, 512)


def regions(grid):
    omega = RegionMask.from_intervals(grid, [(-1.0, 1.0)])
    w1 = RegionMask.from_intervals(grid, [(3.0, 6.0)])
    w2 = RegionMask.from_intervals(grid, [(-6.0, -3.0)])
    return omega, w1, w2


@pytest.fixture(scope="session")
def small_regions(small_grid):
    return regions(small_grid)


@pytest.fixture(scope="session")
def ref_regions(ref_grid):
    return regions(ref_grid)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
