import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rwre_lab.env import EnvSpec, build_environment

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def srw_spec():
    return EnvSpec.uniform_srw(2)


@pytest.fixture(scope="session")
def rd_spec():
    return EnvSpec.random_direction(2)


@pytest.fixture(scope="session")
def srw_box(srw_spec):
    """Uniform nearest-neighbor law on a 4x4 box, the smallest hand-checkable case."""
    return build_environment(srw_spec, 0, (4, 4))


@pytest.fixture(scope="session")
def rd_box_16(rd_spec):
    return build_environment(rd_spec, 3, (16, 16))


def assert_close(a, b, tol):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    assert np.max(np.abs(a - b)) <= tol, f"max diff {np.max(np.abs(a - b))} > {tol}"
