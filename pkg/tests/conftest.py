import numpy as np
import pytest

from tfasim.channel import ArrayGeometry, ClusterConfig, LargeScaleParams, sample_small_scale


def complex_gaussian(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_network():
    """K=4 UEs, J=2 BSs, 2x2 UE arrays and 2x4 BS arrays, i.i.d. channels."""
    r = np.random.default_rng(7)
    H = complex_gaussian(r, 4, 2, 4, 8) * 1e-4
    return H, np.array([1.0, 1.0]), 1e-9


@pytest.fixture(scope="session")
def clustered_draw():
    r = np.random.default_rng(99)
    geom_ue, geom_bs = ArrayGeometry(2, 2), ArrayGeometry(8, 8)
    wl = LargeScaleParams().wavelength
    return lambda: sample_small_scale(ClusterConfig(), geom_ue, geom_bs, wl, r)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def report():
    def record(criterion, ok, detail):
        ACCEPTANCE[criterion] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}  {detail}")
