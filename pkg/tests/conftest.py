import numpy as np
import pytest

from homog.simgen import SimConfig, generate


@pytest.fixture(scope="session")
def small_panel():
    """Six individuals, moderate noise; shared by the estimator tests."""
    return generate(SimConfig(m=6, T=300, sigma=0.1, seed=11))


@pytest.fixture(scope="session")
def noiseless_pair():
    return generate(SimConfig(m=2, T=400, sigma=0.0, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
