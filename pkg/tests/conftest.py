import numpy as np
import pytest

from dpsched.models import Dataset, LossModel


def random_quadratic(D=20, N=500, seed=0, clip=4.0, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, D)) * scale
    return LossModel("quadratic", Dataset(X), clip_norm=clip)


@pytest.fixture
def quad():
    return random_quadratic(D=5, N=60, seed=3, clip=None)


@pytest.fixture
def quad_clipped():
    return random_quadratic(D=5, N=60, seed=3, clip=4.0)


@pytest.fixture
def logistic():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((40, 4))
    y = np.where(rng.random(40) < 0.5, -1.0, 1.0)
    return LossModel("logistic", Dataset(X, y), clip_norm=None)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
        terminalreporter.write_line(line)
