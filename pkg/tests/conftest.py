import pytest

from src.models import LgParams, SvParams, lg_model, simulate, sv_model
from src.rng import RngStream

SV_THETA = SvParams(0.91, 0.5, 1.0).to_vector()
LG_PARAMS = LgParams(a=0.9, q=1.0, c=1.0, r=1.0, m1=0.0, p1=1.0)


@pytest.fixture
def sv():
    return sv_model()


@pytest.fixture
def lg():
    return lg_model(LG_PARAMS)


@pytest.fixture
def lg_theta():
    return LG_PARAMS.to_vector()


@pytest.fixture
def lg_obs(lg):
    def make(T, seed=11):
        return simulate(lg, LG_PARAMS.to_vector(), T, RngStream(seed))[1]
    return make


@pytest.fixture
def sv_obs(sv):
    def make(T, seed=5):
        return simulate(sv, SV_THETA, T, RngStream(seed))[1]
    return make
