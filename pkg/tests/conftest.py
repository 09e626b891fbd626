import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from illumsplat.gaussians import CameraView

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(width=32, height=32, f=40.0, distance=4.0):
    """Camera at (0, 0, distance) looking down -z at the origin."""
    w2c = np.eye(4)
    w2c[2, 3] = -distance
    return CameraView(w2c, f, f, width / 2, height / 2, width, height)


@pytest.fixture
def camera():
    return make_camera()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
