import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vioflight.trajectory import Trajectory

ACCEPTANCE_RESULTS = []


def record_acceptance(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def random_trajectory(rng, n=200, dt=0.1, t0=0.0):
    """Smooth-ish random walk with random orientations, scipy-generated."""
    t = t0 + dt * np.arange(n)
    p = np.cumsum(rng.normal(0.0, 0.3, (n, 3)), axis=0)
    xyzw = Rotation.random(n, random_state=rng).as_quat()
    return Trajectory(t, p, xyzw[:, [3, 0, 1, 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
