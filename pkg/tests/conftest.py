"""
Shared fixtures: small seeded potentials and models
"""

import numpy as np
import pytest

from neuralvqr.engine.model import QuantileModel
from neuralvqr.engine.picnn import PicnnParams, actnorm_init, make_quadratic_params
from neuralvqr.types.models import PicnnConfig


def random_potential(d_u=2, d_x=1, width=6, depth=3, strong_convexity=True, seed=0):
    """Randomly initialized potential with ActNorm set on a standard normal batch"""
    config = PicnnConfig(d_u=d_u, d_x=d_x, width=width, depth=depth, strong_convexity=strong_convexity)
    rng = np.random.default_rng(seed)
    params = PicnnParams.initialize(config, rng)
    U = rng.standard_normal((64, d_u))
    X = rng.standard_normal((64, d_x)) if d_x else None
    return actnorm_init(params, U, X)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_potential():
    return random_potential()


@pytest.fixture
def quadratic_params():
    return make_quadratic_params(PicnnConfig(d_u=2, d_x=0, width=4, depth=2))


@pytest.fixture
def identity_model(quadratic_params):
    """QuantileModel whose rank and quantile maps are both the identity"""
    return QuantileModel(quadratic_params)


@pytest.fixture
def make_potential():
    """Factory for random ActNorm-initialized potentials"""
    return random_potential
