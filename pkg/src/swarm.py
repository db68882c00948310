"""
The particle swarm filter: many independent SISR filters, each at its own parameter
vector drawn from rho, averaged with dpi/drho weights at every time step.

Filters never communicate. Filter i draws its parameter from ``rep.split(i).split(0)``
and its time-t randomness from ``rep.split(i).split(t)``, where ``rep`` is the
replicate stream, so the partition of filters across workers cannot change a single
draw.
"""
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np
from scipy.special import logsumexp

from src.errors import AllWeightsZero, NegativeVarianceEstimate
from src.logger import get_logger
from src.rng import RngStream, row_streams
from src.sisr import MULTINOMIAL, RESAMPLERS, ParticleCloud, advance_cloud
from src.state_space import ModelSpec, PriorSpec

logger = get_logger(__name__)

ABORT = "abort"
DROP = "drop"


@dataclass(frozen=True)
class SwarmConfig:
    n_theta: int
    n_particles: int
    seed: int
    functionals: tuple = ()
    report_marginal_likelihood: bool = True
    replicate: int = 0
    resampling: str = MULTINOMIAL
    compute_check: bool = False
    dead_filter_policy: str = ABORT
    workers: int = 1

    def __post_init__(self):
        if self.n_theta < 1:
            raise ValueError(f"n_theta must be at least 1, got {self.n_theta}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be at least 1, got {self.n_particles}")
        if self.resampling not in RESAMPLERS:
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")
        if self.dead_filter_policy not in (ABORT, DROP):
            raise ValueError(f"unknown dead-filter policy {self.dead_filter_policy!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        object.__setattr__(self, "functionals", tuple(self.functionals))

    def replicate_stream(self):
        return RngStream(self.seed).split(self.replicate)


@dataclass
class SwarmState:
    params: np.ndarray
    log_rn: np.ndarray
    cloud: ParticleCloud
    cum_log_lik: np.ndarray
    t: int
    streams: list
    alive: np.ndarray

    @property
    def n_theta(self):
        return self.params.shape[0]


@dataclass
class SwarmEstimate:
    t: int
    value: dict = field(default_factory=dict)
    per_filter: dict = field(default_factory=dict)
    value_check: dict = field(default_factory=dict)
    per_filter_check: dict = field(default_factory=dict)
    posterior_value: dict = field(default_factory=dict)
    log_marginal_lik: float = None


def combine(per_filter, log_rn, alive=None) -> float:
    """
    N^-1 sum_i exp(log_rn[i]) per_filter[i], over the surviving filters.

    Accumulated with math.fsum so large swarms of mixed magnitudes lose nothing.
    """
    per_filter = np.asarray(per_filter, dtype=float)
    log_rn = np.asarray(log_rn, dtype=float)
    if per_filter.shape != log_rn.shape or per_filter.size == 0:
        raise ValueError("per_filter and log_rn must be non-empty arrays of equal length")
    if alive is None:
        alive = np.ones(per_filter.shape, dtype=bool)
    count = int(np.sum(alive))
    if count == 0:
        return float("nan")
    terms = np.exp(log_rn[alive]) * per_filter[alive]
    return math.fsum(terms.tolist()) / count


def combine_posterior(per_filter, log_rn, cum_log_lik, alive=None) -> float:
    """
    Self-normalized average with weights proportional to dpi/drho times the
    filter's likelihood estimate: the posterior-weighted counterpart of combine.
    """
    per_filter = np.asarray(per_filter, dtype=float)
    log_w = np.asarray(log_rn, dtype=float) + np.asarray(cum_log_lik, dtype=float)
    if alive is not None:
        log_w = np.where(alive, log_w, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_total = logsumexp(log_w)
    if not np.isfinite(log_total):
        return float("nan")
    weights = np.exp(log_w - log_total)
    keep = weights > 0
    return math.fsum((weights[keep] * per_filter[keep]).tolist())


def log_marginal_likelihood(log_rn, cum_log_lik) -> float:
    """log N^-1 sum_i exp(log_rn[i] + cum_log_lik[i]); dead filters count as zero."""
    log_terms = np.asarray(log_rn, dtype=float) + np.asarray(cum_log_lik, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(logsumexp(log_terms) - np.log(log_terms.size))


def swarm_marginal_likelihood(state: SwarmState) -> float:
    if state.t < 1:
        raise ValueError("the swarm has not seen any observation")
    return log_marginal_likelihood(state.log_rn, state.cum_log_lik)


def forecast_interval(estimate_f1: float, estimate_f2: float, clamp: bool = False):
    """
    Center and half-width of the +-2 standard deviation forecast band.

    Built from the two swarm estimates alone; no swarm state is needed, so the
    band can be formed from any SwarmEstimate or stored forecast row.

    A negative variance estimate raises unless ``clamp`` sets it to zero.
    """
    variance = estimate_f2 - estimate_f1**2
    if variance < 0:
        if not clamp:
            raise NegativeVarianceEstimate(
                f"second moment {estimate_f2!r} is below the squared first moment {estimate_f1**2!r}"
            )
        variance = 0.0
    return estimate_f1, 2.0 * math.sqrt(variance)


def draw_parameters(prior: PriorSpec, streams):
    """theta^i ~ rho from each filter's stream, and log dpi/drho(theta^i)."""
    params = np.array([np.asarray(prior.sample_rho(s.split(0).generator()), dtype=float) for s in streams])
    log_rn = np.array([float(prior.log_rn_derivative(theta)) for theta in params])
    log_bound = math.log(prior.rn_upper_bound)
    if np.any(log_rn > log_bound + 1e-12):
        i = int(np.argmax(log_rn))
        raise ValueError(f"dpi/drho at filter {i} exceeds the declared bound {prior.rn_upper_bound}")
    return params, log_rn


def _check_dead(dead, alive_before, params, t, first_index, policy):
    newly_dead = dead & alive_before
    for row in np.flatnonzero(newly_dead):
        i = first_index + int(row)
        if policy == ABORT:
            raise AllWeightsZero(t=t, filter_index=i, theta=params[row])
        logger.warning(f"Dropping filter {i} at t={t}: all particle weights are zero, theta={params[row].tolist()}")


def _advance_rows(spec, params, cloud, y, streams, cfg, t, first_index):
    """Advance a block of filters from t-1 to t (cloud is None at t = 1)."""
    alive_before = np.ones(params.shape[0], dtype=bool) if cloud is None else cloud.alive
    new_cloud, est = advance_cloud(
        spec, params, cloud, y, row_streams(streams, t), cfg.functionals,
        n_particles=cfg.n_particles, resampling=cfg.resampling,
        compute_check=cfg.compute_check, strict=False,
    )
    _check_dead(~new_cloud.alive, alive_before, params, t, first_index, cfg.dead_filter_policy)
    return new_cloud, est


def _assemble(t, est, log_rn, cum_log_lik, alive, cfg):
    estimate = SwarmEstimate(t=t)
    for name, per_filter in est.phi_hat.items():
        estimate.per_filter[name] = per_filter
        estimate.value[name] = combine(per_filter, log_rn, alive)
        estimate.posterior_value[name] = combine_posterior(per_filter, log_rn, cum_log_lik, alive)
    for name, per_filter in est.phi_check.items():
        estimate.per_filter_check[name] = per_filter
        estimate.value_check[name] = combine(per_filter, log_rn, alive)
    if cfg.report_marginal_likelihood:
        estimate.log_marginal_lik = log_marginal_likelihood(log_rn, cum_log_lik)
    return estimate


def start_swarm(spec: ModelSpec, params, log_rn, streams, cfg: SwarmConfig, y1):
    """Start a swarm from given parameters and per-filter streams at t = 1."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    log_rn = np.asarray(log_rn, dtype=float)
    if params.shape[0] != len(streams) or log_rn.shape != (params.shape[0],):
        raise ValueError("params, log_rn and streams must describe the same filters")
    cloud, est = _advance_rows(spec, params, None, y1, streams, cfg, 1, 0)
    cum_log_lik = np.asarray(est.log_cond_lik, dtype=float)
    state = SwarmState(params, log_rn, cloud, cum_log_lik, 1, list(streams), cloud.alive)
    return state, _assemble(1, est, log_rn, cum_log_lik, cloud.alive, cfg)


def instantiate_swarm(spec: ModelSpec, prior: PriorSpec, cfg: SwarmConfig, y1):
    """Draw N_theta parameters from rho and run every filter's time-1 step."""
    rep = cfg.replicate_stream()
    streams = [rep.split(i) for i in range(cfg.n_theta)]
    params, log_rn = draw_parameters(prior, streams)
    return start_swarm(spec, params, log_rn, streams, cfg, y1)


def _advance_chunk(task):
    spec, params, cloud, y, streams, cfg, t, first_index = task
    return _advance_rows(spec, params, cloud, y, streams, cfg, t, first_index)


def _slice_cloud(cloud, rows):
    return ParticleCloud(cloud.particles[rows], cloud.log_weights[rows], cloud.log_weight_sum[rows],
                         cloud.t, cloud.alive[rows])


def _concat(parts):
    clouds = [c for c, _ in parts]
    ests = [e for _, e in parts]
    cloud = ParticleCloud(
        np.concatenate([c.particles for c in clouds]),
        np.concatenate([c.log_weights for c in clouds]),
        np.concatenate([c.log_weight_sum for c in clouds]),
        clouds[0].t,
        np.concatenate([c.alive for c in clouds]),
    )
    est = ests[0]
    est.phi_hat = {k: np.concatenate([e.phi_hat[k] for e in ests]) for k in est.phi_hat}
    est.phi_check = {k: np.concatenate([e.phi_check[k] for e in ests]) for k in est.phi_check}
    est.log_cond_lik = np.concatenate([e.log_cond_lik for e in ests])
    est.ess = np.concatenate([e.ess for e in ests])
    return cloud, est


def advance_swarm(spec: ModelSpec, state: SwarmState, y_t, cfg: SwarmConfig, pool=None):
    """
    Advance every filter to time state.t + 1 and combine their estimates.

    With a multiprocessing pool the filters are split into contiguous chunks, one
    task per chunk; the result does not depend on the pool size.
    """
    t = state.t + 1
    if pool is None or cfg.workers == 1:
        cloud, est = _advance_rows(spec, state.params, state.cloud, y_t, state.streams, cfg, t, 0)
    else:
        chunks = [rows for rows in np.array_split(np.arange(state.n_theta), cfg.workers) if rows.size]
        tasks = [(spec, state.params[rows], _slice_cloud(state.cloud, rows), y_t,
                  [state.streams[i] for i in rows], cfg, t, int(rows[0])) for rows in chunks]
        cloud, est = _concat(pool.map(_advance_chunk, tasks))

    cum_log_lik = state.cum_log_lik + np.asarray(est.log_cond_lik, dtype=float)
    new_state = SwarmState(state.params, state.log_rn, cloud, cum_log_lik, t, state.streams, cloud.alive)
    logger.debug(f"Advanced {state.n_theta} filters to t={t}")
    return new_state, _assemble(t, est, state.log_rn, cum_log_lik, cloud.alive, cfg)


def _run_chunk(task):
    """Run a block of filters over the whole series; returns per-step arrays."""
    spec, params, streams, obs, cfg, first_index = task
    n_steps, rows = len(obs), params.shape[0]
    hat = {f.name: np.empty((n_steps, rows)) for f in cfg.functionals}
    check = {f.name: np.empty((n_steps, rows)) for f in cfg.functionals} if cfg.compute_check else {}
    log_cond = np.empty((n_steps, rows))
    alive = np.empty((n_steps, rows), dtype=bool)

    cloud = None
    for k, y in enumerate(obs):
        cloud, est = _advance_rows(spec, params, cloud, y, streams, cfg, k + 1, first_index)
        for name, values in est.phi_hat.items():
            hat[name][k] = values
        for name, values in est.phi_check.items():
            check[name][k] = values
        log_cond[k] = est.log_cond_lik
        alive[k] = cloud.alive
    return hat, check, log_cond, alive


def run_swarm(spec: ModelSpec, prior: PriorSpec, cfg: SwarmConfig, obs, pool=None):
    """
    Run the whole swarm over y_{1:T} and return one SwarmEstimate per time step.

    Filters are partitioned into cfg.workers contiguous chunks and each worker owns
    its chunk for the whole series. An existing pool may be passed in to save its
    start-up cost across repeated runs. Output is identical to stepping the swarm
    with instantiate_swarm and advance_swarm, for any worker count.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise ValueError("obs must not be empty")
    rep = cfg.replicate_stream()
    streams = [rep.split(i) for i in range(cfg.n_theta)]
    params, log_rn = draw_parameters(prior, streams)
    logger.info(f"Running swarm: n_theta={cfg.n_theta}, n_particles={cfg.n_particles}, T={obs.size}, "
                f"workers={cfg.workers}, replicate={cfg.replicate}")

    chunks = [rows for rows in np.array_split(np.arange(cfg.n_theta), cfg.workers) if rows.size]
    tasks = [(spec, params[rows], [streams[i] for i in rows], obs, cfg, int(rows[0])) for rows in chunks]
    if len(tasks) == 1:
        results = [_run_chunk(tasks[0])]
    elif pool is not None:
        results = pool.map(_run_chunk, tasks)
    else:
        with Pool(processes=len(tasks)) as pool:
            results = pool.map(_run_chunk, tasks)

    hat = {name: np.concatenate([r[0][name] for r in results], axis=1) for name in results[0][0]}
    check = {name: np.concatenate([r[1][name] for r in results], axis=1) for name in results[0][1]}
    log_cond = np.concatenate([r[2] for r in results], axis=1)
    alive = np.concatenate([r[3] for r in results], axis=1)
    cum_log_lik = np.cumsum(log_cond, axis=0)

    estimates = []
    for k in range(obs.size):
        step = _StepEstimates({name: v[k] for name, v in hat.items()}, {name: v[k] for name, v in check.items()})
        estimates.append(_assemble(k + 1, step, log_rn, cum_log_lik[k], alive[k], cfg))
    logger.info(f"Swarm finished: {int(np.sum(alive[-1]))} of {cfg.n_theta} filters alive at T={obs.size}")
    return estimates


@dataclass
class _StepEstimates:
    phi_hat: dict
    phi_check: dict
