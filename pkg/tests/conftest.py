import numpy as np
import pytest

from dropzoom.harness import TrialRecord
from dropzoom.sampler import HyperPoint

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_record(i, units, dropout, cost, accuracy=None, seed=None):
    acc = 100.0 * (1.0 - min(cost, 1.0)) if accuracy is None else accuracy
    return TrialRecord(i, HyperPoint(units, dropout), cost, acc, 0, i if seed is None else seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
