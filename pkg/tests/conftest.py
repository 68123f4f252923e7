import sys

import numpy as np
import pytest

from absvie_lab.grid import make_grid, sample_paths


@pytest.fixture(scope="session")
def grid32():
    return make_grid(1.0, 0.25, 32)


@pytest.fixture(scope="session")
def ens_small(grid32):
    return sample_paths(grid32, 4000, 1, seed=11)


@pytest.fixture(scope="session")
def ens_mid(grid32):
    return sample_paths(grid32, 20000, 1, seed=12)


def const_phi(grid, x0):
    return np.full(grid.nodesN + 1, float(x0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
