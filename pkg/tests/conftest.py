import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from wardsense import kernels

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ANCHOR = datetime(2020, 1, 6, 7, 0)

BACKENDS = [pytest.param(kernels.numpy_impl, id="numpy")]
if kernels.numba_impl is not None:
    BACKENDS.append(pytest.param(kernels.numba_impl, id="numba"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_day(rng, zero_p=0.6, mean=80.0, gaps=0):
    """A 1440-slot zero-inflated activity day with optional NaN gaps."""
    counts = np.where(rng.random(1440) < zero_p, 0.0, np.rint(rng.gamma(0.7, mean / 0.7, 1440)))
    for _ in range(gaps):
        start = int(rng.integers(0, 1400))
        counts[start:start + int(rng.integers(5, 40))] = np.nan
    return counts


# One line per acceptance criterion, printed at the end of the session.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
