from math import pi

import pytest
from hypothesis import settings

from trapshuttle import RB87_MASS, TransportSpec

OMEGA0 = 2 * pi * 50
D = 1.6e-3
DELTA = 1.6e-4
TF = 0.03
HANSCH_DELTA = 9 * D / (2 * OMEGA0**2 * TF**2)


def hansch_spec() -> TransportSpec:
    return TransportSpec(mass=RB87_MASS, omega0=OMEGA0, d=D, tf=TF, delta=HANSCH_DELTA)


@pytest.fixture
def bang_spec():
    """Time-minimisation problem: 50 Hz trap, 1.6 mm, 0.16 mm bound."""
    return TransportSpec(mass=RB87_MASS, omega0=OMEGA0, d=D, delta=DELTA)


@pytest.fixture
def hansch():
    """30 ms transport at gamma = 8/9."""
    return hansch_spec()


@pytest.fixture
def unbounded():
    return TransportSpec(mass=RB87_MASS, omega0=OMEGA0, d=D, tf=TF)


# Property tests draw from a fixed seed so reruns are reproducible.
settings.register_profile("default", derandomize=True, deadline=None)
settings.load_profile("default")
