import numpy as np
import pytest

from cubaflow.geometry import Manifold


@pytest.fixture(scope="session")
def circle():
    return Manifold("circle")


@pytest.fixture(scope="session")
def torus():
    return Manifold("torus2")


@pytest.fixture(scope="session")
def sphere():
    return Manifold("sphere2")


@pytest.fixture(scope="session")
def ellipse21():
    return Manifold("ellipse", 2.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
