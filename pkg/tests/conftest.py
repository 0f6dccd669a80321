import numpy as np
import pytest

from dpdynamics.trainer import Dataset

_criteria = []


def mc_records() -> np.ndarray:
    """Fixed 10-point, 2-d dataset used by the Monte-Carlo checks."""
    t = 2 * np.pi * np.arange(10) / 10
    return np.column_stack([0.8 * np.cos(t) + 0.3, 0.6 * np.sin(t) - 0.2])


@pytest.fixture
def mc_dataset():
    return Dataset.from_records(mc_records())


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for the acceptance report."""

    def record(number, text, passed):
        _criteria.append((number, text, bool(passed)))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, passed in sorted(_criteria, key=lambda c: c[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}")
