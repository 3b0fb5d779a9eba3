import numpy as np
import pytest

from dlsphere.core import Constellation, Observation, draw_trial, snr_to_sigma


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def qam4() -> Constellation:
    return Constellation.qam(4)


@pytest.fixture
def qam16() -> Constellation:
    return Constellation.qam(16)


def make_observation(seed: int, n: int, m: int, order: int, snr_db: float) -> Observation:
    """A reproducible noisy observation with its truth attached."""
    constellation = Constellation.qam(order)
    sigma_w2 = snr_to_sigma(snr_db, m, constellation.avg_power)
    return draw_trial(np.random.default_rng(seed), n, m, constellation, sigma_w2)


@pytest.fixture
def make_obs():
    return make_observation
