import numpy as np
import pytest

from sphpoly import _backend
from sphpoly.approx import ApproxConfig
from sphpoly.kernel import cubic_spline_kernel, kernel_constants
from sphpoly.lut import build_lut

BACKENDS = ["python"] + (["cython"] if _backend.accel is not None else [])


@pytest.fixture(scope="session")
def kernel():
    return cubic_spline_kernel()


@pytest.fixture(scope="session")
def constants(kernel):
    return kernel_constants(kernel)


@pytest.fixture(scope="session")
def lut_cache(kernel):
    """Small tables shared across modules, keyed by ``(K, D, N)``."""
    cache = {}

    def get(K, D, N=64):
        key = (K, D, N)
        if key not in cache:
            cache[key] = build_lut(kernel, ApproxConfig(K, D), N=N, seed=0)
        return cache[key]

    return get


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One PASS/FAIL line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
