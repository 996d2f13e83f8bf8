import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dalmp import synthetic
from dalmp.forecaster import NetworkConfig

settings.register_profile("dalmp", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dalmp")


def tiny_config(**overrides) -> NetworkConfig:
    """A forecaster small enough for exhaustive finite-difference checks."""
    base = dict(n_z=12, n_x=6, x_f=5, c_f=2, kernel_width=3, lstm_units=3,
                dense1_units=4, dense2_units=6, batch_size=4)
    base.update(overrides)
    return NetworkConfig(**base)


def random_inputs(cfg: NetworkConfig, batch: int, rng: np.random.Generator):
    z = rng.normal(0.0, 1.0, (batch, cfg.n_z, 1))
    x = rng.normal(0.0, 1.0, (batch, cfg.n_x, cfg.x_f))
    y = rng.normal(0.5, 0.3, (batch, cfg.n_x, 1))
    return z, x, y


@pytest.fixture(scope="session")
def small_market():
    """60 days of the default synthetic market (seed 3)."""
    return synthetic.generate_market(synthetic.MarketParams(seed=3), 60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
