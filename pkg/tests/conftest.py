import numpy as np
import pytest

from temporal_transport.model import Dataset, Observation, TrialSpec
from temporal_transport.nuisance import NuisanceConfig, fit_cross_fitted
from temporal_transport.simlab import DgpConfig, OracleNuisance, draw_dataset


@pytest.fixture(scope="session")
def default_config():
    return DgpConfig(n_total=1200, seed=101)


@pytest.fixture(scope="session")
def noisy_data(default_config):
    return draw_dataset(default_config)


@pytest.fixture(scope="session")
def noisy_nuisance(noisy_data):
    return fit_cross_fitted(noisy_data, NuisanceConfig(seed=11))


@pytest.fixture(scope="session")
def noiseless_config():
    return DgpConfig(n_total=1200, seed=202, noise_sd=0.0)


@pytest.fixture(scope="session")
def noiseless_data(noiseless_config):
    return draw_dataset(noiseless_config)


@pytest.fixture(scope="session")
def noiseless_nuisance(noiseless_data):
    return fit_cross_fitted(noiseless_data, NuisanceConfig(seed=13))


@pytest.fixture(scope="session")
def noiseless_oracle(noiseless_config, noiseless_data):
    return OracleNuisance(noiseless_config, noiseless_data)


def tiny_dataset():
    """Two trials, two arms each, four observations per trial."""
    trials = {
        1: TrialSpec(1, 1, 0, 1, 3),
        2: TrialSpec(2, 1, 0, 7, 9),
    }
    obs = []
    rng = np.random.default_rng(5)
    for k in trials:
        for arm in (1, 0):
            for _ in range(2):
                obs.append(Observation(float(rng.normal()), arm, k,
                                       (float(rng.normal()), float(rng.integers(0, 2)))))
    return Dataset.from_observations(trials, obs)
