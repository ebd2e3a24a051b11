import functools

import pytest

from wander.gaussian_core import GridSpec, build_basis
from wander.kernel import make_kernel

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def kernel(family="cauchy_fast", param=1.0):
    return make_kernel(family, param)


@functools.lru_cache(maxsize=None)
def grid_and_basis(t=20.0, n_t=20, band_N=16, beta=1.0, target_err=1e-3, family="cauchy_fast", param=1.0, seed=0):
    grid = GridSpec(t=t, n_t=n_t, band_N=band_N, beta=beta, master_seed=seed)
    return grid, build_basis(kernel(family, param), grid, target_err)


@pytest.fixture(scope="session")
def fast():
    return kernel("cauchy_fast", 1.0)


@pytest.fixture(scope="session")
def small():
    """t = 20 grid with a 16-block band and its basis."""
    return grid_and_basis()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
