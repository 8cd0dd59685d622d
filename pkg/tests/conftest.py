import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "dyncopula", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dyncopula")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(autouse=True)
def _quiet_boundary_warnings():
    # GARCH fits on short simulated paths sometimes touch the stationarity bound
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="GARCH\\(2,1\\) optimum", category=RuntimeWarning)
        yield


# -- acceptance report --------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line."""

    def record(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
