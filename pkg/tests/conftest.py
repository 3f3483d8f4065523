import pytest

from thinlab.hyperbolic import GeneratorSystem

SANOV = [(1, 2, 0, 1), (1, 0, 2, 1)]
SL2Z = [(1, 1, 0, 1), (1, 0, 1, 1)]
SCHOTTKY = [(5, 2, 2, 1), (13, 45, 2, 7)]


@pytest.fixture(scope="session")
def sanov():
    return GeneratorSystem.from_base(SANOV, "sanov")


@pytest.fixture(scope="session")
def sl2z():
    return GeneratorSystem.from_base(SL2Z, "sl2z")


@pytest.fixture(scope="session")
def schottky():
    return GeneratorSystem.from_base(SCHOTTKY, "schottky")
