import numpy as np
import pytest

from bemsim.building import default_parameters, discretize
from bemsim.config import default_config
from bemsim.datagen import CalendarClock, GeneratorConfig, generate_span


@pytest.fixture(scope="session")
def params():
    return default_parameters()


@pytest.fixture(scope="session")
def model(params):
    return discretize(params)


@pytest.fixture(scope="session")
def clock():
    return CalendarClock()


@pytest.fixture(scope="session")
def frame(clock):
    return generate_span(GeneratorConfig(seed=42), clock, 3000)


@pytest.fixture(scope="session")
def world():
    return default_config()


def random_parameters(seed):
    """Valid random 9-zone parameter draws for property tests."""
    from bemsim.building import BuildingParameters, N_ZONES
    rng = np.random.default_rng(seed)
    cth = np.concatenate([rng.uniform(20, 120, 7), rng.uniform(5, 10, 2)])
    beta = np.zeros((N_ZONES, N_ZONES))
    for i in range(N_ZONES - 1):
        beta[i, i + 1] = beta[i + 1, i] = rng.uniform(0.5, 2.0)
    # a few extra couplings beyond the chain
    for _ in range(rng.integers(0, 4)):
        i, j = rng.integers(0, N_ZONES, 2)
        if i != j:
            v = rng.uniform(0.2, 1.5)
            beta[i, j] = beta[j, i] = v
    ha = rng.uniform(0.5, 3.0, N_ZONES)
    return BuildingParameters(cth=cth, beta=beta, ha=ha)
