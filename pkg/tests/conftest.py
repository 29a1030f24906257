import numpy as np
import pytest

from phasefield.fem import FemSpace
from phasefield.mesh import generate_uniform


@pytest.fixture(scope="session")
def unit4():
    return FemSpace(generate_uniform(4, 4))


@pytest.fixture(scope="session")
def square8():
    return FemSpace(generate_uniform(8, 8, (-1.0, -1.0, 1.0, 1.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
