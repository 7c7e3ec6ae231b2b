import time

import numpy as np
import pytest

from recdual.dual_value import value_iterate
from recdual.oracles import build_example_model, example_gamma_grid

_VERDICTS = []


@pytest.fixture(scope="session")
def verdicts():
    """Collects one line per acceptance criterion for the terminal summary."""
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1():
    return build_example_model(1, 0.4)


@pytest.fixture(scope="session")
def ex2():
    return build_example_model(2)


def _solve(spec, variant):
    t0 = time.perf_counter()
    field, report = value_iterate(spec, variant, gamma_grid=example_gamma_grid())
    return field, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ex1_infsup(ex1):
    return _solve(ex1, "infsup")


@pytest.fixture(scope="session")
def ex1_supinf(ex1):
    return _solve(ex1, "supinf")


@pytest.fixture(scope="session")
def ex2_infsup(ex2):
    return _solve(ex2, "infsup")


@pytest.fixture(scope="session")
def ex2_supinf(ex2):
    return _solve(ex2, "supinf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
