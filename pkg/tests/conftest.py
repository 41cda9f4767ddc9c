import numpy as np
import pytest

from cellfree_ota.config import SystemConfig
from cellfree_ota.geometry import build_correlations, generate_layout


@pytest.fixture(scope="session")
def default_cfg():
    return SystemConfig()


@pytest.fixture(scope="session")
def small_cfg():
    # small but non-degenerate: keeps Monte Carlo oracles cheap
    return SystemConfig(L=3, K=2, N=4, M=2, tau_u=4)


@pytest.fixture(scope="session")
def small_corr(small_cfg):
    layout = generate_layout(small_cfg, np.random.default_rng(11))
    return build_correlations(layout, small_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
