import numpy as np
import pytest

from mile.core import GroupedDataset
from mile.models import simulate_dataset
from mile.rand import make_generator


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simulated(model, N, M, seed=0, **params):
    """Dataset and true latents from the package simulator."""
    return simulate_dataset(model, params or None, N, M, make_generator(seed, 99))


def dataset(values, timestamps=None, horizon=None):
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if timestamps is None:
        return GroupedDataset(v)
    return GroupedDataset(v, np.asarray(timestamps, dtype=float), horizon)


# ------------------------------------------------------ acceptance report

ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
