import numpy as np
import pytest

from apdlr.lowrank import CoefficientFields
from apdlr.mesh import StaggeredGrid
from apdlr.velocity import load_velocity_set

# (criterion label, "PASS"/"FAIL", detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_grid():
    return StaggeredGrid(0.0, 1.0, 0.0, 1.0, 6, 5)


@pytest.fixture(scope="session")
def vs26():
    return load_velocity_set(26)


@pytest.fixture(scope="session")
def vs6():
    return load_velocity_set(6)


def random_coeffs(grid, rng, eps=0.3, variable=True):
    if not variable:
        return CoefficientFields.constant(grid, eps, 1.0, 0.0)
    ss = 0.5 + rng.random(grid.shape)
    sa = 0.3 * rng.random(grid.shape)
    return CoefficientFields(eps, ss, sa, 0.5 + rng.random(grid.shape),
                             0.3 * rng.random(grid.shape))
