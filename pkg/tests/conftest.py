import numpy as np
import pytest

from isacctl.dp import solve_dp
from isacctl.gains import compute_gains
from isacctl.model import benchmark_scenario

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bench():
    return benchmark_scenario()


@pytest.fixture(scope="session")
def bench_gains(bench):
    return compute_gains(bench)


@pytest.fixture(scope="session")
def bench_solution(bench, bench_gains):
    return solve_dp(bench, gains=bench_gains)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
