"""
Exact scalar Kalman filter for the linear-Gaussian model.

Reference values for filtered means, predictive moments and the likelihood that the
particle filters are checked against.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats

from src.models import LG_PARAM_NAMES, LgParams


@dataclass(frozen=True)
class KalmanState:
    mean: float
    var: float
    log_lik: float
    pred_mean: float
    pred_var: float
    innovation: float = 0.0
    innovation_var: float = 1.0


def kalman_step(p: LgParams, s: KalmanState, y) -> KalmanState:
    """
    Predict from the filtered state s (or from the initial law when s is None),
    then condition on y.
    """
    if s is None:
        pred_mean, pred_var, log_lik = p.m1, p.p1, 0.0
    else:
        pred_mean = p.a * s.mean
        pred_var = p.a**2 * s.var + p.q
        log_lik = s.log_lik

    y = float(y)
    innovation = y - p.c * pred_mean
    innovation_var = p.c**2 * pred_var + p.r
    gain = pred_var * p.c / innovation_var
    return KalmanState(
        mean=pred_mean + gain * innovation,
        var=(1.0 - gain * p.c) * pred_var,
        log_lik=log_lik + float(stats.norm.logpdf(innovation, 0.0, np.sqrt(innovation_var))),
        pred_mean=pred_mean,
        pred_var=pred_var,
        innovation=innovation,
        innovation_var=innovation_var,
    )


def kalman_run(p: LgParams, obs) -> list:
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise ValueError("obs must not be empty")
    states = []
    s = None
    for y in obs:
        s = kalman_step(p, s, y)
        states.append(s)
    return states


def filtered_means(p: LgParams, obs):
    return np.array([s.mean for s in kalman_run(p, obs)])


def forecast_moments(p: LgParams, s: KalmanState):
    """E[y_{t+1} | y_{1:t}] and E[y_{t+1}^2 | y_{1:t}] from the filtered state at t."""
    mean = p.c * p.a * s.mean
    var = p.c**2 * (p.a**2 * s.var + p.q) + p.r
    return mean, var + mean**2


def prior_average(p: LgParams, obs, support: dict, points: int = 100, statistic=filtered_means):
    """
    Average a Kalman statistic over a uniform prior box by the midpoint rule.

    ``support`` maps LG parameter names to (lo, hi); the others stay fixed at p. Each
    free dimension gets ``points`` nodes.
    """
    unknown = set(support) - set(LG_PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown LG parameters {sorted(unknown)}")
    names = list(support)
    axes = []
    for name in names:
        lo, hi = support[name]
        edges = np.linspace(lo, hi, points + 1)
        axes.append((edges[:-1] + edges[1:]) / 2.0)

    base = dict(zip(LG_PARAM_NAMES, p.to_vector()))
    total = None
    count = 0
    for node in itertools.product(*axes):
        values = {**base, **dict(zip(names, node))}
        result = np.asarray(statistic(LgParams(**values), obs), dtype=float)
        total = result if total is None else total + result
        count += 1
    return total / count
