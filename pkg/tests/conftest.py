import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbaucb.vb import ArmHistory, TpbnHyper

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by test_acceptance; printed once at the end of the session
CRITERIA_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[n])


@pytest.fixture
def hyper():
    return TpbnHyper()


def make_fixture_data():
    """Pinned 30 x 3 regression problem used by the oracle comparisons."""
    rng = np.random.default_rng(7)
    X = rng.standard_normal((30, 3))
    beta = np.array([2.0, -1.0, 0.0])
    r = X @ beta + 0.5 * rng.standard_normal(30)
    return X, r, beta


@pytest.fixture
def fixture_history():
    X, r, _ = make_fixture_data()
    return ArmHistory(X, r)


def random_history(rng, M, D, sparsity=None, noise=0.3):
    X = rng.standard_normal((M, D))
    beta = rng.standard_normal(D)
    if sparsity is not None:
        beta[rng.permutation(D)[sparsity:]] = 0.0
    r = X @ beta + noise * rng.standard_normal(M)
    return ArmHistory(X, r), beta
