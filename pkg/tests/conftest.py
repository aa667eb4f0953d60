import warnings

import numpy as np
import pytest

from chanest.arrays import build_uca, build_upa, half_wavelength
from chanest.channel import FrequencyGrid


@pytest.fixture(autouse=True)
def _quiet_fallback_warnings():
    # low-rank spatial covariances trigger the documented eigen-clipping fallback
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*[Cc]holesky.*")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spacing():
    return half_wavelength(5.5e9)


@pytest.fixture(scope="session")
def small_arrays(spacing):
    """A 2x2 UPA (8 ports) and a 1x4 UCA (8 ports)."""
    return build_upa(2, 2, spacing), build_uca(1, 4, spacing)


@pytest.fixture(scope="session")
def full_arrays(spacing):
    """The 32-port UPA and 64-port UCA."""
    return build_upa(4, 4, spacing), build_uca(4, 8, spacing)


@pytest.fixture(scope="session")
def grid64():
    return FrequencyGrid(n_freq=64)


@pytest.fixture(scope="session")
def grid256():
    return FrequencyGrid(n_freq=256)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion and assert on it."""

    def check(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
