import numpy as np
import pytest

from toothgd.phantom import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomSpec(seed=0))


@pytest.fixture(scope="session")
def phantoms():
    return [generate_phantom(PhantomSpec(seed=s)) for s in range(3)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
