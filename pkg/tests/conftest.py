import numpy as np
import pytest

from bundlemart.geometry import PointRef
from bundlemart.manifolds import flat_space, sphere, torus


@pytest.fixture(scope="session")
def s2():
    return sphere(2)


@pytest.fixture(scope="session")
def t2():
    return torus(2)


@pytest.fixture(scope="session")
def r2():
    return flat_space(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def south(x, y):
    return PointRef("south", np.array([x, y], dtype=float))


ACCEPTANCE_LINES = {}


def report_criterion(number, passed, detail):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
