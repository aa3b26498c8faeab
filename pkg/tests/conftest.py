import numpy as np
import pytest

from splatfuse.scene import Camera, GaussianSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cam9():
    """9x9 identity-pose camera with the principal point on pixel (4, 4)."""
    return Camera(10.0, 10.0, 4.0, 4.0, 9, 9)


def make_set(mu, log_scale=-1.0, opacity_logit=0.0, color=0.5, dyn_logit=None):
    mu = np.atleast_2d(np.asarray(mu, float))
    n = len(mu)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianSet(mu, np.full((n, 3), float(log_scale)) if np.isscalar(log_scale)
                       else np.asarray(log_scale, float),
                       rot, np.broadcast_to(np.asarray(opacity_logit, float), (n,)).copy(),
                       np.broadcast_to(np.asarray(color, float), (n, 1, 3)).copy(),
                       None if dyn_logit is None
                       else np.broadcast_to(np.asarray(dyn_logit, float), (n,)).copy())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
