import numpy as np
import pytest
from scipy import stats

from src.errors import AllWeightsZero
from src.kalman import kalman_run, kalman_step
from src.models import LgParams, LinearGaussian, lg_model
from src.rng import RngStream, RowStreams
from src.sisr import (SYSTEMATIC, ParticleCloud, advance_cloud, effective_sample_size, init_filter,
                      normalize_log_weights, resample_multinomial, resample_systematic, run_filter, step_filter,
                      weighted_estimate)
from src.state_space import FilterFunctional, constant_one, state_identity

from tests.conftest import LG_PARAMS

HAND_LOG_WEIGHTS = np.append(np.log([1.0, 2.0, 3.0, 4.0]), -np.inf)
HAND_VALUES = np.array([1.0, 1.0, 2.0, 2.0, 3.0])


class FarObservationKills(LinearGaussian):
    """Zero weight for every particle once an observation exceeds 100."""

    def log_obs_density(self, theta, x, y):
        base = super().log_obs_density(theta, x, y)
        return np.where(y > 100, -np.inf, base)


def _affine(theta, x):
    return 2.0 * np.asarray(x) + 3.0


def test_weighted_estimate_hand_case():
    assert weighted_estimate(HAND_LOG_WEIGHTS, HAND_VALUES) == pytest.approx(1.7, rel=1e-12)


def test_weighted_estimate_is_shift_invariant():
    shifted = weighted_estimate(HAND_LOG_WEIGHTS + 5.0, HAND_VALUES)
    assert shifted == pytest.approx(weighted_estimate(HAND_LOG_WEIGHTS, HAND_VALUES), rel=1e-12)


def test_normalized_weights_sum_to_one():
    weights, log_sum = normalize_log_weights(HAND_LOG_WEIGHTS)
    assert np.sum(weights) == pytest.approx(1.0)
    assert log_sum == pytest.approx(np.log(10.0))
    assert weights[-1] == 0.0


def test_effective_sample_size_bounds():
    assert effective_sample_size(np.zeros(8)) == pytest.approx(8.0)
    assert effective_sample_size(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1.0)


def test_point_mass_resampling():
    indices = resample_multinomial(np.array([0.0, -np.inf, -np.inf]), 100, RngStream(1))
    assert np.all(indices == 0)


def test_resampling_single_output():
    indices = resample_multinomial(np.zeros(5), 1, RngStream(2))
    assert indices.shape == (1,) and 0 <= indices[0] < 5


def test_uniform_resampling_frequencies():
    indices = resample_multinomial(np.zeros(3), 100_000, RngStream(3))
    counts = np.bincount(indices, minlength=3)
    assert stats.chisquare(counts).pvalue > 0.001


def test_resampling_frequencies_follow_weights():
    weights = np.array([0.1, 0.2, 0.7])
    indices = resample_multinomial(np.log(weights), 100_000, RngStream(4))
    counts = np.bincount(indices, minlength=3)
    assert stats.chisquare(counts, 100_000 * weights).pvalue > 0.001


def test_resampling_ignores_weight_scale():
    log_w = np.array([0.0, -1.0, -2.0, -0.5])
    a = resample_multinomial(log_w, 50, RngStream(5))
    b = resample_multinomial(log_w + 3.0, 50, RngStream(5))
    np.testing.assert_array_equal(a, b)


def test_resampling_with_no_positive_weight_raises():
    with pytest.raises(AllWeightsZero):
        resample_multinomial(np.full(4, -np.inf), 4, RngStream(6))


def test_resampling_rejects_empty_output():
    with pytest.raises(ValueError):
        resample_multinomial(np.zeros(3), 0, RngStream(6))


def test_systematic_counts_stay_within_one_of_expectation():
    weights = np.array([0.2, 0.3, 0.5])
    for seed in range(20):
        counts = np.bincount(resample_systematic(np.log(weights), 10, RngStream(seed)), minlength=3)
        assert np.all(counts >= np.floor(10 * weights)) and np.all(counts <= np.ceil(10 * weights))


def test_block_resampling_matches_single_rows():
    log_w = np.log(np.array([[0.1, 0.2, 0.7], [0.5, 0.25, 0.25]]))
    streams = [RngStream(9).split(i) for i in range(2)]
    block = resample_multinomial(log_w, 20, RowStreams([s.generator() for s in streams]))
    for i in range(2):
        np.testing.assert_array_equal(block[i], resample_multinomial(log_w[i], 20, streams[i]))


def test_single_particle_filter(lg, lg_theta):
    cloud, est = init_filter(lg, lg_theta, 1, 0.7, RngStream(1), (state_identity(),))
    assert est.phi_hat["x"] == cloud.particles[0]
    assert est.log_cond_lik == pytest.approx(lg.log_obs_density(lg_theta, cloud.particles, 0.7)[0])


def test_constant_functional_estimates_one(lg, lg_theta):
    _, est = init_filter(lg, lg_theta, 200, 1.3, RngStream(2), (constant_one(),), compute_check=True)
    assert est.phi_hat["one"] == pytest.approx(1.0, abs=1e-12)
    assert est.phi_check["one"] == 1.0


def test_resampled_cloud_is_uniformly_weighted(lg, lg_theta):
    cloud, _ = init_filter(lg, lg_theta, 64, 0.2, RngStream(3))
    assert np.all(cloud.log_weights == 0.0)
    np.testing.assert_allclose(cloud.normalized_weights(), 1.0 / 64)
    assert cloud.t == 1


def test_dominant_particle_takes_the_whole_cloud():
    p = LgParams(a=1.0, q=1e-20, c=1.0, r=1e-2)
    spec, theta = lg_model(p), p.to_vector()
    start = ParticleCloud(np.array([0.0, 100.0, 100.0, 100.0]), np.zeros(4), np.log(4.0), t=1)
    cloud, est = step_filter(spec, theta, start, 0.0, (state_identity(),), RngStream(4), compute_check=True)
    assert np.all(cloud.particles == cloud.particles[0])
    assert abs(cloud.particles[0]) < 1e-6
    assert est.phi_check["x"] == pytest.approx(cloud.particles[0], rel=1e-15, abs=1e-300)


def test_estimates_are_linear_in_the_functional(lg, lg_theta):
    fs = (state_identity(), constant_one(), FilterFunctional("affine", _affine))
    _, est = init_filter(lg, lg_theta, 500, -0.4, RngStream(5), fs)
    assert est.phi_hat["affine"] == pytest.approx(2.0 * est.phi_hat["x"] + 3.0 * est.phi_hat["one"], abs=1e-10)


def test_all_zero_weights_raise_at_the_failing_step(lg_theta):
    spec = FarObservationKills(LG_PARAMS)
    with pytest.raises(AllWeightsZero) as info:
        run_filter(spec, lg_theta, 50, [0.0, 0.5, 1000.0], (state_identity(),), RngStream(6))
    assert info.value.t == 3
    np.testing.assert_array_equal(info.value.theta, lg_theta)


def test_all_zero_weights_at_time_one(lg_theta):
    with pytest.raises(AllWeightsZero):
        init_filter(FarObservationKills(LG_PARAMS), lg_theta, 10, 500.0, RngStream(7))


def test_single_observation_run_equals_initialization(lg, lg_theta):
    rng = RngStream(8)
    history, total = run_filter(lg, lg_theta, 100, [0.9], (state_identity(),), rng)
    _, est = init_filter(lg, lg_theta, 100, 0.9, rng.split(1), (state_identity(),))
    assert history[0].phi_hat == est.phi_hat
    assert total == est.log_cond_lik


def test_run_filter_is_deterministic(lg, lg_theta, lg_obs):
    obs = lg_obs(20)
    a, total_a = run_filter(lg, lg_theta, 100, obs, (state_identity(),), RngStream(9))
    b, total_b = run_filter(lg, lg_theta, 100, obs, (state_identity(),), RngStream(9))
    assert [e.phi_hat for e in a] == [e.phi_hat for e in b]
    assert total_a == total_b


def test_run_filter_rejects_empty_series(lg, lg_theta):
    with pytest.raises(ValueError):
        run_filter(lg, lg_theta, 10, [], (), RngStream(0))


def test_filter_in_a_block_matches_filter_alone(lg, lg_obs):
    thetas = np.array([LG_PARAMS.to_vector(), LgParams(a=0.5).to_vector()])
    streams = [RngStream(10).split(i) for i in range(2)]
    obs = lg_obs(5)
    fs = (state_identity(),)

    cloud = None
    block_values = []
    for t, y in enumerate(obs, start=1):
        gen = RowStreams([s.split(t).generator() for s in streams])
        cloud, est = advance_cloud(lg, thetas, cloud, y, gen, fs, n_particles=40, strict=False)
        block_values.append(est.phi_hat["x"])

    for i in range(2):
        history, _ = run_filter(lg, thetas[i], 40, obs, fs, streams[i])
        np.testing.assert_array_equal([e.phi_hat["x"] for e in history], [v[i] for v in block_values])


def test_systematic_filter_runs(lg, lg_theta, lg_obs):
    history, total = run_filter(lg, lg_theta, 100, lg_obs(10), (state_identity(),), RngStream(11),
                                resampling=SYSTEMATIC)
    assert len(history) == 10 and np.isfinite(total)


def test_filtered_mean_matches_kalman_at_time_one(lg, lg_theta):
    _, est = init_filter(lg, lg_theta, 10_000, 1.0, RngStream(12), (state_identity(),))
    exact = kalman_step(LG_PARAMS, None, 1.0)
    assert exact.mean == pytest.approx(0.5)
    assert abs(est.phi_hat["x"] - exact.mean) < 4 * np.sqrt(exact.var / est.ess)


def test_likelihood_estimate_is_unbiased(lg, lg_theta, lg_obs):
    obs = lg_obs(10)
    exact = kalman_run(LG_PARAMS, obs)[-1].log_lik
    ratios = np.array([np.exp(run_filter(lg, lg_theta, 200, obs, (), RngStream(100 + k))[1] - exact)
                       for k in range(100)])
    assert abs(np.mean(ratios) - 1.0) < 3 * np.std(ratios, ddof=1) / np.sqrt(ratios.size)
