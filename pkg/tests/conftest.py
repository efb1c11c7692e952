import os
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# pass/fail lines from the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = []


def piecewise_linear(T, kinks, slopes, level=0.0):
    """Continuous piecewise-linear signal with the given slopes between kinks (0-based t)."""
    t = np.arange(T, dtype=float)
    f = level + slopes[0] * t
    for k, s0, s1 in zip(kinks, slopes, slopes[1:]):
        f = f + (s1 - s0) * np.maximum(t - k, 0.0)
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_csv():
    return FIXTURES / "synthetic_region.csv"


@pytest.fixture(scope="session")
def fixture_series():
    from kinkfilter import build_series, load_raw

    return build_series(load_raw(FIXTURES / "synthetic_region.csv", 1e7))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def archive_dir():
    path = os.environ.get("KINKFILTER_ARCHIVE")
    return Path(path) if path else None
