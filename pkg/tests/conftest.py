import math
import sys

import numpy as np
import pytest

from ksns.spectral import Grid


@pytest.fixture
def grid64():
    return Grid(64, 2 * math.pi)


@pytest.fixture
def grid32():
    return Grid(32, 2 * math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def band_limited(grid, rng, shape=(), kmax=6):
    """Random real field whose modes satisfy |index| <= kmax on both axes."""
    out = np.zeros(shape + grid.shape)
    for idx in np.ndindex(*shape) if shape else [()]:
        fh = np.zeros(grid.spectral_shape, complex)
        mask = (np.abs(grid.index_x[:, None]) <= kmax) & (grid.index_y[None, :] <= kmax)
        coeffs = rng.standard_normal(grid.spectral_shape) + 1j * rng.standard_normal(grid.spectral_shape)
        fh[mask] = coeffs[mask]
        out[idx] = grid.ifft(fh)
    return out


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance criterion (still part of the default run)")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
