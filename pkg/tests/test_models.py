import numpy as np
import pytest

from src.errors import FunctionalOverflow
from src.models import (LgParams, SvParams, lg_f1, lg_f2, lg_model, lg_prior, simulate, sv_f1, sv_f2, sv_prior,
                        truncate)
from src.rng import RngStream
from src.state_space import validate_model

from tests.conftest import LG_PARAMS, SV_THETA


def test_sv_observation_density_at_origin(sv):
    value = sv.log_obs_density(SV_THETA, np.array([0.0]), 0.0)[0]
    assert value == pytest.approx(-0.5 * np.log(2 * np.pi * 0.25))
    assert value == pytest.approx(-0.22579, abs=1e-5)


def test_sv_initial_variance_is_stationary(sv):
    x = sv.initial_state(SV_THETA, 200_000, RngStream(1).generator())
    assert 1.0 / (1.0 - 0.91**2) == pytest.approx(5.8173, abs=1e-4)
    assert np.var(x) == pytest.approx(5.8173, rel=0.02)


def test_sv_transition_with_vanishing_noise(sv):
    theta = np.array([0.91, 0.5, 1e-12])
    x = sv.next_state(theta, np.array([1.0]), RngStream(2).generator())
    assert abs(x[0] - 0.91) < 1e-6


@pytest.mark.parametrize("y", [0.0, 1.5])
def test_sv_zero_beta_gives_zero_weight(sv, y):
    value = sv.log_obs_density(np.array([0.91, 0.0, 1.0]), np.array([0.3]), y)[0]
    assert value == -np.inf


def test_sv_underflowing_variance_is_minus_infinity_not_nan(sv):
    value = sv.log_obs_density(SV_THETA, np.array([-1e4]), 0.1)[0]
    assert value == -np.inf


def test_sv_params_validation():
    with pytest.raises(ValueError):
        SvParams(phi=1.0)
    with pytest.raises(ValueError):
        SvParams(sigma=0.0)
    with pytest.raises(ValueError):
        SvParams(beta=-0.1)


def test_sv_first_moment_is_zero():
    values = sv_f1()(SV_THETA, np.array([-3.0, 0.0, 4.0]))
    assert np.all(values == 0.0)


@pytest.mark.parametrize("x, expected", [(0.0, 0.25 * np.exp(0.5)), (2.0, 0.25 * np.exp(1.82 + 0.5))])
def test_sv_second_moment(x, expected):
    assert sv_f2()(SV_THETA, np.array([x]))[0] == pytest.approx(expected, rel=1e-12)


def test_sv_second_moment_hand_value():
    assert sv_f2()(SV_THETA, np.array([0.0]))[0] == pytest.approx(0.41218, abs=1e-5)


def test_sv_second_moment_is_positive():
    x = np.linspace(-30, 30, 101)
    assert np.all(sv_f2()(SV_THETA, x) > 0)


def test_sv_second_moment_overflow():
    with pytest.raises(FunctionalOverflow):
        sv_f2()(SV_THETA, np.array([1000.0]))


def test_truncated_second_moment():
    f = truncate(sv_f2(), 50)
    values = f(SV_THETA, np.array([2.0, 1000.0, -60.0]))
    assert values[0] == sv_f2()(SV_THETA, np.array([2.0]))[0]
    assert values[1] == 0.0 and values[2] == 0.0
    assert f.name == "f2_trunc"


def test_truncate_rejects_nonpositive_bound():
    with pytest.raises(ValueError):
        truncate(sv_f2(), 0.0)


def test_lg_observation_density_at_origin(lg, lg_theta):
    value = lg.log_obs_density(lg_theta, np.array([0.0]), 0.0)[0]
    assert value == pytest.approx(-0.5 * np.log(2 * np.pi))
    assert value == pytest.approx(-0.91894, abs=1e-5)


def test_lg_transitions_forget_the_past_when_a_is_zero():
    p = LgParams(a=0.0, q=1.0)
    x = lg_model(p).next_state(p.to_vector(), np.full(100_000, 5.0), RngStream(3).generator())
    assert abs(np.mean(x)) < 0.02


def test_lg_initial_draws_with_vanishing_variance():
    p = LgParams(m1=2.5, p1=1e-12)
    x = lg_model(p).initial_state(p.to_vector(), 1000, RngStream(4).generator())
    assert np.all(np.abs(x - 2.5) < 1e-4)


def test_lg_params_validation():
    with pytest.raises(ValueError):
        LgParams(q=0.0)
    with pytest.raises(ValueError):
        LgParams(r=-1.0)


def test_lg_forecast_functionals(lg_theta):
    x = np.array([1.0, -2.0])
    np.testing.assert_allclose(lg_f1()(lg_theta, x), 0.9 * x)
    np.testing.assert_allclose(lg_f2()(lg_theta, x), 0.81 * x**2 + 1.0 + 1.0)


def test_simulate_single_step(sv):
    states, obs = simulate(sv, SV_THETA, 1, RngStream(0))
    assert states.shape == (1,) and obs.shape == (1,)


def test_simulate_is_deterministic(sv):
    a = simulate(sv, SV_THETA, 50, RngStream(8))
    b = simulate(sv, SV_THETA, 50, RngStream(8))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_simulate_rejects_empty_horizon(sv):
    with pytest.raises(ValueError):
        simulate(sv, SV_THETA, 0, RngStream(0))


def test_sv_long_run_moments(sv):
    states, _ = simulate(sv, SV_THETA, 100_000, RngStream(12))
    assert -0.1 <= np.mean(states) <= 0.1
    assert 5.2 <= np.var(states) <= 6.4
    assert np.var(states) == pytest.approx(5.8173, rel=0.10)


def test_both_models_pass_validation(sv, lg):
    assert validate_model(sv, sv_prior(), 10_000, RngStream(1)).ok
    assert validate_model(lg, lg_prior(LG_PARAMS, {"a": (0.5, 0.99)}), 10_000, RngStream(2)).ok


def test_lg_prior_rejects_unknown_parameter():
    with pytest.raises(ValueError):
        lg_prior(LG_PARAMS, {"phi": (0.0, 1.0)})


def test_lg_model_uses_its_own_parameters_without_theta():
    p = LgParams(a=0.5, r=4.0)
    bound = lg_model(p).log_obs_density(None, np.array([1.0]), 0.0)[0]
    default = lg_model().log_obs_density(None, np.array([1.0]), 0.0)[0]
    assert bound != pytest.approx(default)
    assert bound == pytest.approx(lg_model().log_obs_density(p.to_vector(), np.array([1.0]), 0.0)[0])


def test_lg_model_simulates_at_bound_parameters():
    p = LgParams(a=0.5, q=2.0)
    assert np.array_equal(simulate(lg_model(p), None, 30, RngStream(6))[1],
                          simulate(lg_model(), p.to_vector(), 30, RngStream(6))[1])


def test_lg_model_rejects_non_parameter_object():
    with pytest.raises(TypeError):
        lg_model({"a": 0.5})
