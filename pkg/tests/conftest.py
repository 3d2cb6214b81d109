import numpy as np
import pytest

from svde.grid_noise import make_grid
from svde.kernel import KernelSeries, cos_field, linear_field, sin_field


@pytest.fixture
def cos_kernel():
    return KernelSeries([(0, cos_field())], 0.5)


@pytest.fixture
def two_term_kernel():
    """Smooth bounded two-term kernel with distinct fields per power."""
    return KernelSeries([(0, sin_field(0.7)), (2, cos_field(-1.3))], 1.0)


@pytest.fixture
def exp_kernel():
    return KernelSeries([(0, linear_field(1.0))], 1.0)


@pytest.fixture
def small_grid():
    return make_grid(1.0, 64)


def relerr(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), 1e-300)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
