import numpy as np
import pytest

from kdvlab.spectral import Grid, SpectralField


def random_field(grid, rng, scale=1.0, decay=1.0):
    k = grid.wavenumbers
    c = (rng.standard_normal(grid.K) + 1j * rng.standard_normal(grid.K)) * scale / k**decay
    return SpectralField(grid, c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid16():
    return Grid(16)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
