import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_criteria = []


def record_criterion(number, name, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    _criteria.append((number, line))
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criteria):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def matched_partner(W, seed):
    """A second manifold point with the same row labels as ``W`` but fresh values."""
    rng = np.random.default_rng(seed)
    out = np.zeros_like(W)
    for j in range(W.shape[1]):
        rows = np.flatnonzero(W[:, j] > 0)
        if rows.size:
            z = rng.exponential(1.0, rows.size)
            out[rows, j] = z / z.sum()
    return out
