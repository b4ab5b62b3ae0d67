import numpy as np
import pytest

from nsdet.geometry import build_rectangle
from nsdet.solver import random_initial_field

ACCEPTANCE_LINES = []


@pytest.fixture
def unit64():
    return build_rectangle(64, 64)


@pytest.fixture
def unit32():
    return build_rectangle(32, 32)


@pytest.fixture
def smooth_velocity(unit32):
    return random_initial_field(unit32, seed=11, amplitude=0.2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
