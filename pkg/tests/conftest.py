import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rslf.geometry import LightFieldIntrinsics
from rslf.simulate import default_rig

settings.register_profile("rslf", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rslf")


@pytest.fixture
def rig() -> LightFieldIntrinsics:
    return default_rig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_intrinsics(rng, offset=True, tau=None) -> LightFieldIntrinsics:
    """Plausible random optics; ``offset`` keeps both principal offsets non-zero."""
    F = rng.uniform(0.02, 0.1)
    ox, oy = (rng.uniform(0.0005, 0.005, 2) * rng.choice([-1, 1], 2)) if offset else (0.0, 0.0)
    return LightFieldIntrinsics(
        F=F,
        f=rng.uniform(0.0005, 0.003),
        d=F * rng.uniform(1.05, 1.6),
        Ox=float(ox),
        Oy=float(oy),
        tau=rng.uniform(0.01, 0.2) if tau is None else tau,
        rows=int(rng.integers(2, 10)),
        cols=int(rng.integers(2, 10)),
        pitch=rng.uniform(0.002, 0.01),
        origin_s=rng.uniform(-0.03, 0.0),
        origin_t=rng.uniform(-0.03, 0.0),
    )


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
