"""
Sequential importance sampling with resampling for one parameter vector.

Every function works on a single filter (particles of shape (n,)) or on a block of
filters advancing in lockstep (particles of shape (b, n), theta of shape (b, p)).
Row i of a block draws only from row i's generator, so a filter gives the same
numbers whether it runs alone or inside any block.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from src.errors import AllWeightsZero, ModelEvaluationError
from src.logger import get_logger
from src.rng import RngStream
from src.state_space import ModelSpec

logger = get_logger(__name__)

MULTINOMIAL = "multinomial"
SYSTEMATIC = "systematic"


@dataclass
class ParticleCloud:
    particles: np.ndarray
    log_weights: np.ndarray
    log_weight_sum: np.ndarray
    t: int
    alive: np.ndarray = None

    @property
    def n_particles(self):
        return self.particles.shape[-1]

    def normalized_weights(self):
        return np.exp(self.log_weights - np.asarray(self.log_weight_sum)[..., None])


@dataclass
class FilterEstimates:
    t: int
    phi_hat: dict = field(default_factory=dict)
    phi_check: dict = field(default_factory=dict)
    log_cond_lik: object = 0.0
    ess: object = 0.0


def _as_generator(rng):
    return rng.generator() if isinstance(rng, RngStream) else rng


def log_sum_weights(log_weights):
    """log sum_j exp(log_weights[..., j]), -inf for rows without a positive weight."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return logsumexp(log_weights, axis=-1)


def normalize_log_weights(log_weights):
    """
    Normalized weights and the row log-sums.

    Rows whose weights are all zero come back uniform with a log-sum of -inf.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    log_sum = log_sum_weights(log_weights)
    dead = ~np.isfinite(log_sum)
    safe_sum = np.where(dead, 0.0, log_sum)
    weights = np.exp(log_weights - np.asarray(safe_sum)[..., None])
    if np.any(dead):
        weights = np.where(np.asarray(dead)[..., None], 1.0 / log_weights.shape[-1], weights)
    return weights, log_sum


def weighted_estimate(log_weights, values):
    """sum_j w_j f_j / sum_j w_j along the particle axis."""
    weights, _ = normalize_log_weights(log_weights)
    return np.sum(weights * values, axis=-1)


def effective_sample_size(log_weights):
    weights, _ = normalize_log_weights(log_weights)
    return 1.0 / np.sum(weights**2, axis=-1)


def _cumulative_weights(log_weights):
    log_weights = np.asarray(log_weights, dtype=float)
    if not np.all(np.any(np.isfinite(log_weights), axis=-1)):
        raise AllWeightsZero()
    top = np.max(log_weights, axis=-1, keepdims=True)
    return np.cumsum(np.exp(log_weights - top), axis=-1)


def _search_rows(cdf, points):
    # row by row so a row's indices never depend on the other rows
    if cdf.ndim == 1:
        return np.searchsorted(cdf, points * cdf[-1], side="right")
    rows = [np.searchsorted(c, p * c[-1], side="right") for c, p in zip(cdf.reshape(-1, cdf.shape[-1]), points.reshape(-1, points.shape[-1]))]
    return np.stack(rows).reshape(points.shape)


def resample_multinomial(log_weights, n_out, rng):
    """iid categorical draws with P(I = j) proportional to exp(log_weights[j])."""
    if n_out < 1:
        raise ValueError(f"n_out must be at least 1, got {n_out}")
    cdf = _cumulative_weights(log_weights)
    uniforms = _as_generator(rng).random(cdf.shape[:-1] + (n_out,))
    return _search_rows(cdf, uniforms)


def resample_systematic(log_weights, n_out, rng):
    """One shared uniform offset per row, then n_out evenly spaced points."""
    if n_out < 1:
        raise ValueError(f"n_out must be at least 1, got {n_out}")
    cdf = _cumulative_weights(log_weights)
    offsets = _as_generator(rng).random(cdf.shape[:-1] + (1,))
    points = (offsets + np.arange(n_out)) / n_out
    return _search_rows(cdf, points)


RESAMPLERS = {MULTINOMIAL: resample_multinomial, SYSTEMATIC: resample_systematic}


def advance_cloud(spec: ModelSpec, theta, cloud, y, gen, functionals=(), n_particles=None,
                  resampling=MULTINOMIAL, compute_check=False, strict=True):
    """
    One SISR step: mutate (or draw at t = 1), weight, estimate, resample.

    ``cloud`` is None at t = 1, in which case ``n_particles`` particles are drawn from
    the time-1 proposal. Mutation draws come from ``gen`` first, resampling draws
    after. With ``strict`` a row whose weights all vanish raises AllWeightsZero;
    otherwise the row is marked dead, its estimates are NaN and it resamples
    uniformly.
    """
    theta = np.asarray(theta, dtype=float)
    if cloud is None:
        if n_particles is None or n_particles < 1:
            raise ValueError(f"n_particles must be at least 1, got {n_particles}")
        t = 1
        x = spec.sample_initial(theta, n_particles, y, gen)
        log_w = spec.log_unnorm_weight(theta, None, x, y)
        previously_alive = None
    else:
        t = cloud.t + 1
        x = spec.sample_transition(theta, cloud.particles, y, gen)
        log_w = spec.log_unnorm_weight(theta, cloud.particles, x, y)
        previously_alive = cloud.alive
    x = np.asarray(x, dtype=float)
    log_w = np.broadcast_to(np.asarray(log_w, dtype=float), x.shape)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ModelEvaluationError(f"log-weight is NaN or +inf at t={t}")

    n = x.shape[-1]
    weights, log_sum = normalize_log_weights(log_w)
    dead = ~np.isfinite(log_sum)
    if previously_alive is not None:
        dead = dead | ~previously_alive
    if np.any(dead):
        if strict:
            row = None if np.ndim(dead) == 0 else int(np.flatnonzero(dead)[0])
            raise AllWeightsZero(t=t, filter_index=row)
        logger.debug(f"{int(np.sum(dead))} filters have no positive weight at t={t}")

    estimates = FilterEstimates(t=t)
    for f in functionals:
        values = np.broadcast_to(f(theta, x), x.shape)
        estimates.phi_hat[f.name] = np.where(dead, np.nan, np.sum(weights * values, axis=-1))
    with np.errstate(divide="ignore"):
        estimates.log_cond_lik = np.where(dead, -np.inf, log_sum - np.log(n))
    estimates.ess = np.where(dead, 0.0, 1.0 / np.sum(weights**2, axis=-1))

    resample_log_w = np.where(np.asarray(dead)[..., None], 0.0, log_w)
    indices = RESAMPLERS[resampling](resample_log_w, n, gen)
    resampled = np.take_along_axis(x, indices, axis=-1)

    if compute_check:
        for f in functionals:
            values = np.broadcast_to(f(theta, resampled), resampled.shape)
            estimates.phi_check[f.name] = np.where(dead, np.nan, np.mean(values, axis=-1))

    new_cloud = ParticleCloud(
        particles=resampled,
        log_weights=np.zeros_like(resampled),
        log_weight_sum=np.full(np.shape(log_sum), np.log(n)),
        t=t,
        alive=~dead,
    )
    return new_cloud, estimates


def _scalar_estimates(estimates: FilterEstimates):
    return replace(
        estimates,
        phi_hat={k: float(v) for k, v in estimates.phi_hat.items()},
        phi_check={k: float(v) for k, v in estimates.phi_check.items()},
        log_cond_lik=float(estimates.log_cond_lik),
        ess=float(estimates.ess),
    )


def init_filter(spec: ModelSpec, theta, n_particles: int, y1, rng, functionals=(),
                resampling=MULTINOMIAL, compute_check=False):
    """
    Draw, weight and resample the time-1 particles of a single filter.

    ``rng`` is the stream (or generator) for time 1. Estimates are computed from the
    weighted particles before resampling; the returned cloud is uniform-weighted.
    """
    if n_particles < 1:
        raise ValueError(f"n_particles must be at least 1, got {n_particles}")
    cloud, estimates = advance_cloud(spec, theta, None, y1, _as_generator(rng), functionals,
                                     n_particles=n_particles, resampling=resampling,
                                     compute_check=compute_check)
    return cloud, _scalar_estimates(estimates)


def step_filter(spec: ModelSpec, theta, cloud: ParticleCloud, y_t, functionals, rng,
                resampling=MULTINOMIAL, compute_check=False):
    """Advance a uniform-weighted single-filter cloud by one observation."""
    cloud, estimates = advance_cloud(spec, theta, cloud, y_t, _as_generator(rng), functionals,
                                     resampling=resampling, compute_check=compute_check)
    return cloud, _scalar_estimates(estimates)


def run_filter(spec: ModelSpec, theta, n_particles: int, obs, functionals, rng: RngStream,
               resampling=MULTINOMIAL, compute_check=False):
    """
    Run one filter over the whole series.

    Time t draws from ``rng.split(t)``. Returns the per-step estimates and the total
    log-likelihood estimate, the sum of the per-step conditional log-likelihoods.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise ValueError("obs must not be empty")

    history = []
    cloud = None
    for t, y in enumerate(obs, start=1):
        try:
            if cloud is None:
                cloud, est = init_filter(spec, theta, n_particles, y, rng.split(t), functionals,
                                         resampling=resampling, compute_check=compute_check)
            else:
                cloud, est = step_filter(spec, theta, cloud, y, functionals, rng.split(t),
                                         resampling=resampling, compute_check=compute_check)
        except AllWeightsZero as e:
            raise e.with_context(t=t, theta=np.asarray(theta)) from e
        history.append(est)
    total = float(np.sum([est.log_cond_lik for est in history]))
    return history, total
