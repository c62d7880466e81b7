import numpy as np
import pytest

from deconv.model import DiscreteDistribution, NoiseKernel


@pytest.fixture
def exp1():
    return NoiseKernel.exponential(1.0)


@pytest.fixture
def lap1():
    return NoiseKernel.laplace(1.0)


@pytest.fixture
def two_point():
    return DiscreteDistribution([0.0, 1.0], [0.5, 0.5])


@pytest.fixture
def rs():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run whether or not output is captured
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
