"""
Experiment commands behind the CLI: simulate data, run swarm forecasts, and the
replication and convergence studies. Every command writes a CSV and nothing else;
output bytes depend only on the config and seed, never on the worker count.
"""
from multiprocessing import Pool

import numpy as np
import pandas as pd

from src.config import ExperimentConfig
from src.errors import ConfigError, DataError
from src.kalman import filtered_means
from src.logger import get_logger
from src.models import (LG_PARAM_NAMES, SV_PARAM_NAMES, LgParams, SvParams, lg_f1, lg_f2, lg_model,
                        simulate, sv_f1, sv_f2, sv_model, truncate)
from src.rng import SIMULATION_BRANCH, RngStream
from src.state_space import UniformBoxPrior, state_identity
from src.swarm import SwarmConfig, forecast_interval, run_swarm

logger = get_logger(__name__)


# CSV


def format_real(value) -> str:
    """Shortest decimal that reads back to the same double."""
    return repr(float(value))


def write_series(path, t, columns: dict):
    """Write a CSV with a leading integer t column and real-valued columns."""
    frame = pd.DataFrame({"t": np.asarray(t, dtype=np.int64)})
    for name, values in columns.items():
        frame[name] = [format_real(v) for v in values]
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def write_table(path, rows: list):
    """Write a list of dicts as CSV; reals use the shortest round-trip form."""
    formatted = [{k: format_real(v) if isinstance(v, float) else v for k, v in row.items()} for row in rows]
    pd.DataFrame(formatted).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def read_series(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def read_observations(path):
    """Observations y_{1:T} from a 't,y' CSV whose t runs 1..T."""
    try:
        frame = read_series(path)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read data file {path}: {e}")
    if list(frame.columns[:2]) != ["t", "y"]:
        raise DataError(f"{path}: header must start with 't,y', got {','.join(frame.columns)}")
    if frame.empty:
        raise DataError(f"{path}: no observations")
    t = frame["t"].to_numpy()
    if not np.array_equal(t, np.arange(1, len(frame) + 1)):
        raise DataError(f"{path}: t must run 1, 2, ..., T")
    y = pd.to_numeric(frame["y"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError(f"{path}: y must be finite numbers")
    return y


# Builders


def build_model(cfg: ExperimentConfig):
    """The model spec and the data-generating parameter vector."""
    try:
        if cfg.model == "sv":
            return sv_model(), SvParams(**cfg.model_params).to_vector()
        if cfg.model == "lg":
            p = LgParams(**cfg.model_params)
            return lg_model(p), p.to_vector()
    except ValueError as e:
        raise ConfigError(str(e), key="model")
    raise ConfigError(f"unknown model {cfg.model!r}", key="model.name")


def build_prior(cfg: ExperimentConfig) -> UniformBoxPrior:
    """Uniform box from [prior]; parameters without bounds stay at their [model] value."""
    names = SV_PARAM_NAMES if cfg.model == "sv" else LG_PARAM_NAMES
    lower, upper = [], []
    for name in names:
        lo, hi = cfg.prior.get(name, (cfg.model_params[name], cfg.model_params[name]))
        lower.append(lo)
        upper.append(hi)
    try:
        return UniformBoxPrior(lower, upper, names)
    except ValueError as e:
        raise ConfigError(str(e), key="prior")


def forecast_functionals(cfg: ExperimentConfig):
    f1, f2 = (sv_f1(), sv_f2()) if cfg.model == "sv" else (lg_f1(), lg_f2())
    if cfg.truncate_m is not None:
        f2 = truncate(f2, cfg.truncate_m)
    return f1, f2


def swarm_config(cfg: ExperimentConfig, functionals, replicate=0, n_theta=None, n_particles=None,
                 compute_check=False):
    return SwarmConfig(
        n_theta=n_theta or cfg.n_theta,
        n_particles=n_particles or cfg.n_particles,
        seed=cfg.seed,
        functionals=tuple(functionals),
        report_marginal_likelihood="marginal_lik" in cfg.outputs,
        replicate=replicate,
        resampling=cfg.resampling,
        compute_check=compute_check,
        dead_filter_policy=cfg.dead_filter_policy,
        workers=cfg.workers,
    )


def simulate_series(cfg: ExperimentConfig):
    spec, theta = build_model(cfg)
    return simulate(spec, theta, cfg.T, RngStream(cfg.seed).split(SIMULATION_BRANCH))


# Commands


def cmd_simulate(cfg: ExperimentConfig, out_path, with_states=False):
    """Simulate y_{1:T} (and x_{1:T} with with_states) to a 't,y[,x]' CSV."""
    states, obs = simulate_series(cfg)
    columns = {"y": obs}
    if with_states:
        columns["x"] = states
    write_series(out_path, np.arange(1, cfg.T + 1), columns)
    logger.info(f"Simulated {cfg.T} observations from the {cfg.model} model to {out_path}")


def cmd_forecast(cfg: ExperimentConfig, data_path, out_path, estimator=None):
    """
    Run the swarm over the data and write one-step-ahead forecasts per t:
    t, y, f1 and f2 estimates, plus the band center +- 2 predictive standard
    deviations when ``outputs`` lists forecast_intervals.
    """
    obs = read_observations(data_path)
    estimator = estimator or cfg.estimator
    f1, f2 = forecast_functionals(cfg)
    spec, _ = build_model(cfg)
    prior = build_prior(cfg)
    swarm_cfg = swarm_config(cfg, (f1, f2), compute_check=estimator == "check")
    estimates = run_swarm(spec, prior, swarm_cfg, obs)

    values = [e.value if estimator == "hat" else e.value_check for e in estimates]
    m1 = np.array([v[f1.name] for v in values])
    m2 = np.array([v[f2.name] for v in values])
    suffix = estimator
    columns = {"y": obs, f"f1_{suffix}": m1, f"f2_{suffix}": m2}
    if "forecast_intervals" in cfg.outputs:
        lo, hi = np.empty(obs.size), np.empty(obs.size)
        for k in range(obs.size):
            center, halfwidth = forecast_interval(m1[k], m2[k], clamp=cfg.clamp_variance)
            lo[k], hi[k] = center - halfwidth, center + halfwidth
        columns["lo"], columns["hi"] = lo, hi
    if "posterior_forecast" in cfg.outputs:
        columns["f1_post"] = [e.posterior_value[f1.name] for e in estimates]
        columns["f2_post"] = [e.posterior_value[f2.name] for e in estimates]
    if "marginal_lik" in cfg.outputs:
        columns["log_marginal_lik"] = [e.log_marginal_lik for e in estimates]
    write_series(out_path, np.arange(1, obs.size + 1), columns)
    logger.info(f"Wrote {obs.size} forecast rows to {out_path}")


def _replicate_f2(cfg, spec, prior, f1, f2, obs, replications, pool):
    runs = np.empty((replications, obs.size))
    for r in range(replications):
        swarm_cfg = swarm_config(cfg, (f1, f2), replicate=r)
        estimates = run_swarm(spec, prior, swarm_cfg, obs, pool=pool)
        runs[r] = [e.value[f2.name] for e in estimates]
        logger.debug(f"Replicate {r + 1}/{replications} done")
    return runs


def cmd_replication_study(cfg: ExperimentConfig, out_path, data_path=None, drop_first=False):
    """
    Repeat the swarm R times over one series and write the per-t sample standard
    deviation of the f2 estimate. The series is read from data_path or simulated
    from the config.
    """
    if cfg.replications < 2:
        raise ConfigError(f"needs at least 2 replications, got {cfg.replications}", key="run.replications")
    obs = read_observations(data_path) if data_path else simulate_series(cfg)[1]
    spec, _ = build_model(cfg)
    prior = build_prior(cfg)
    f1, f2 = forecast_functionals(cfg)

    logger.info(f"Replication study: R={cfg.replications}, n_theta={cfg.n_theta}, "
                f"n_particles={cfg.n_particles}, T={obs.size}")
    if cfg.workers > 1:
        with Pool(processes=cfg.workers) as pool:
            runs = _replicate_f2(cfg, spec, prior, f1, f2, obs, cfg.replications, pool)
    else:
        runs = _replicate_f2(cfg, spec, prior, f1, f2, obs, cfg.replications, None)

    t = np.arange(1, obs.size + 1)
    std = np.std(runs, axis=0, ddof=1)
    mean = np.mean(runs, axis=0)
    if drop_first:
        t, std, mean = t[1:], std[1:], mean[1:]
    write_series(out_path, t, {"f2_mean": mean, "f2_std": std})
    logger.info(f"Wrote replication standard deviations for {t.size} time points to {out_path}")
    return runs


def _ratios(metrics, rungs):
    ratios = [None]
    theoretical = [None]
    for k in range(1, len(rungs)):
        ratios.append(metrics[k - 1] / metrics[k])
        theoretical.append(float(np.sqrt(rungs[k] / rungs[k - 1])))
    return ratios, theoretical


def particle_ladder(cfg: ExperimentConfig, obs, truth, pool=None):
    """
    Replication RMSE of the filtered-mean estimate against the Kalman truth for
    each N_X rung, at fixed theta. A replication averages ``ladder_fixed_n_theta``
    independent filters at that theta, so a point-prior swarm with that many filters
    per replication runs them all at once.
    """
    spec, theta = build_model(cfg)
    point = UniformBoxPrior(theta, theta, LG_PARAM_NAMES)
    per_rep = cfg.ladder_fixed_n_theta
    metrics = []
    for n_particles in cfg.ladder_n_particles:
        swarm_cfg = swarm_config(cfg, (state_identity(),), n_theta=cfg.replications * per_rep,
                                 n_particles=n_particles)
        estimates = run_swarm(spec, point, swarm_cfg, obs, pool=pool)
        per_filter = np.array([e.per_filter["x"] for e in estimates])
        replicated = per_filter.reshape(obs.size, cfg.replications, per_rep).mean(axis=2)
        errors = replicated - truth[:, None]
        metrics.append(float(np.sqrt(np.mean(errors**2))))
        logger.info(f"N_X={n_particles}: RMSE {metrics[-1]:.6g}")
    return metrics


def swarm_ladder(cfg: ExperimentConfig, obs, pool=None):
    """Replication standard deviation of the swarm's filtered-mean estimate per N_theta rung."""
    spec, _ = build_model(cfg)
    prior = build_prior(cfg)
    metrics = []
    for n_theta in cfg.ladder_n_theta:
        runs = np.empty((cfg.replications, obs.size))
        for r in range(cfg.replications):
            swarm_cfg = swarm_config(cfg, (state_identity(),), replicate=r, n_theta=n_theta,
                                     n_particles=cfg.ladder_fixed_n_particles)
            runs[r] = [e.value["x"] for e in run_swarm(spec, prior, swarm_cfg, obs, pool=pool)]
        # pooled over t so one noisy step does not decide the rate
        metrics.append(float(np.sqrt(np.mean(np.var(runs, axis=0, ddof=1)))))
        logger.info(f"N_theta={n_theta}: replication std {metrics[-1]:.6g}")
    return metrics


def cmd_convergence_study(cfg: ExperimentConfig, out_path):
    """
    Table of observed error ratios per ladder step next to the N^-1/2 rate's
    theoretical ratio, for the N_X ladder and the N_theta ladder.
    """
    if cfg.model != "lg":
        raise ConfigError("the convergence study needs the lg model", key="model.name")
    if cfg.replications < 2:
        raise ConfigError(f"needs at least 2 replications, got {cfg.replications}", key="run.replications")
    _, obs = simulate_series(cfg)
    truth = filtered_means(LgParams(**cfg.model_params), obs)

    def run(pool):
        return particle_ladder(cfg, obs, truth, pool), swarm_ladder(cfg, obs, pool)

    if cfg.workers > 1:
        with Pool(processes=cfg.workers) as pool:
            particle_metrics, swarm_metrics = run(pool)
    else:
        particle_metrics, swarm_metrics = run(None)

    rows = []
    for study, rungs, metrics, metric_name in (
        ("n_particles", cfg.ladder_n_particles, particle_metrics, "rmse"),
        ("n_theta", cfg.ladder_n_theta, swarm_metrics, "replication_std"),
    ):
        ratios, theoretical = _ratios(metrics, rungs)
        for rung, metric, ratio, expected in zip(rungs, metrics, ratios, theoretical):
            rows.append({
                "study": study,
                "rung": rung,
                "metric": metric_name,
                "value": metric,
                "ratio": "" if ratio is None else float(ratio),
                "theoretical_ratio": "" if expected is None else float(expected),
            })
    write_table(out_path, rows)
    logger.info(f"Wrote convergence table to {out_path}")
    return rows
