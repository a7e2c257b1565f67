import numpy as np
import pytest

from csf_lab import flows
from csf_lab.warped_metric import WarpingFunction

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def blooming():
    return WarpingFunction.blooming()


@pytest.fixture(scope="session")
def flat():
    return WarpingFunction.flat()


@pytest.fixture(scope="session")
def nested(blooming):
    """y_8, y_16, y_24 at 40 nodes per unit, dt = 1e-3, up to t = 0.5."""
    return flows.build_nested([8, 16, 24], blooming, resolution=40, T=0.5, dt=1e-3)


@pytest.fixture(scope="session")
def hc_runs(blooming):
    from csf_lab.parabolic_solver import solve_dirichlet

    out = {}
    for c in (3.0, 5.0):
        spec = flows.spec_Hc(c, blooming, resolution=40, dt=1e-3, T=1.0)
        out[c] = (spec, solve_dirichlet(spec, 1.0))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
