"""
Concrete state-space models: Taylor's stochastic-volatility model and a scalar
linear-Gaussian model whose exact filter serves as the oracle for testing.
"""
from dataclasses import dataclass

import numpy as np

from src.errors import FunctionalOverflow
from src.rng import RngStream
from src.state_space import BootstrapModel, FilterFunctional, ModelSpec, UniformBoxPrior, param_column

LOG_2PI = np.log(2.0 * np.pi)
LOG_FLOAT_MAX = np.log(np.finfo(float).max)

DEFAULT_TRUNCATION = 50.0


def _normal_logpdf(y, mean, var):
    """log N(y; mean, var), -inf wherever var is not strictly positive."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)
    return np.where(var > 0, out, -np.inf)


# Stochastic volatility


@dataclass(frozen=True)
class SvParams:
    phi: float = 0.91
    beta: float = 0.5
    sigma: float = 1.0

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError(f"phi must satisfy |phi| < 1, got {self.phi}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def to_vector(self):
        return np.array([self.phi, self.beta, self.sigma])


SV_PARAM_NAMES = ("phi", "beta", "sigma")
SV_PRIOR_SUPPORT = {"phi": (0.5, 0.99), "beta": (0.0, 1.0), "sigma": (0.5, 2.0)}


class StochasticVolatility(BootstrapModel):
    """
    x_1 ~ N(0, sigma^2 / (1 - phi^2)), x_t = phi x_{t-1} + sigma w_t,
    y_t = beta exp(x_t / 2) v_t with w, v iid standard normal.
    """

    param_names = SV_PARAM_NAMES

    def initial_state(self, theta, n, rng):
        phi, sigma = param_column(theta, 0), param_column(theta, 2)
        shape = np.shape(theta)[:-1] + (n,)
        return sigma / np.sqrt(1.0 - phi**2) * rng.standard_normal(shape)

    def next_state(self, theta, x_prev, rng):
        phi, sigma = param_column(theta, 0), param_column(theta, 2)
        return phi * x_prev + sigma * rng.standard_normal(np.shape(x_prev))

    def sample_observation(self, theta, x, rng):
        beta = param_column(theta, 1)
        return beta * np.exp(x / 2.0) * rng.standard_normal(np.shape(x))

    def log_obs_density(self, theta, x, y):
        beta = param_column(theta, 1)
        with np.errstate(over="ignore"):
            var = beta**2 * np.exp(x)
        return _normal_logpdf(y, 0.0, var)


def sv_model() -> ModelSpec:
    return StochasticVolatility()


def sv_prior(support=None) -> UniformBoxPrior:
    """The independent uniform priors of the volatility study, sampled directly."""
    support = {**SV_PRIOR_SUPPORT, **(support or {})}
    lower = [support[name][0] for name in SV_PARAM_NAMES]
    upper = [support[name][1] for name in SV_PARAM_NAMES]
    return UniformBoxPrior(lower, upper, SV_PARAM_NAMES)


def _sv_first_moment(theta, x):
    # E[y_{t+1} | x_t, theta] = 0
    return np.zeros(np.broadcast_shapes(np.shape(param_column(theta, 0)), np.shape(x)))


def _sv_second_moment(theta, x):
    # E[y_{t+1}^2 | x_t, theta] = beta^2 exp(phi x_t + sigma^2 / 2)
    phi, beta, sigma = param_column(theta, 0), param_column(theta, 1), param_column(theta, 2)
    with np.errstate(divide="ignore"):
        exponent = phi * x + sigma**2 / 2.0 + 2.0 * np.log(beta)
    if np.any(exponent > LOG_FLOAT_MAX):
        raise FunctionalOverflow(f"f2 exponent {float(np.max(exponent)):.6g} exceeds the float range")
    return np.exp(exponent)


def sv_f1() -> FilterFunctional:
    return FilterFunctional("f1", _sv_first_moment)


def sv_f2() -> FilterFunctional:
    return FilterFunctional("f2", _sv_second_moment)


class _Truncated:
    def __init__(self, inner, bound):
        self.inner = inner
        self.bound = bound

    def __call__(self, theta, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.bound
        values = self.inner(theta, np.where(inside, x, 0.0))
        return np.where(inside, values, 0.0)


def truncate(f: FilterFunctional, bound: float = DEFAULT_TRUNCATION) -> FilterFunctional:
    """f(theta, x) * 1(|x| <= bound); states outside the band are never evaluated."""
    if not bound > 0:
        raise ValueError(f"truncation bound must be positive, got {bound}")
    return FilterFunctional(f"{f.name}_trunc", _Truncated(f.eval, float(bound)))


# Linear Gaussian


@dataclass(frozen=True)
class LgParams:
    a: float = 0.9
    q: float = 1.0
    c: float = 1.0
    r: float = 1.0
    m1: float = 0.0
    p1: float = 1.0

    def __post_init__(self):
        for name in ("q", "r", "p1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def to_vector(self):
        return np.array([self.a, self.q, self.c, self.r, self.m1, self.p1])

    @classmethod
    def from_vector(cls, theta):
        return cls(*(float(v) for v in theta))


LG_PARAM_NAMES = ("a", "q", "c", "r", "m1", "p1")


class LinearGaussian(BootstrapModel):
    """
    x_1 ~ N(m1, p1), x_t ~ N(a x_{t-1}, q), y_t ~ N(c x_t, r).

    The model is bound to ``params``: any kernel called with theta=None runs at
    those values, while an explicit theta (one row per filter) overrides them.
    """

    param_names = LG_PARAM_NAMES

    def __init__(self, params: LgParams = None):
        self.params = params or LgParams()

    def _resolve(self, theta):
        return self.params.to_vector() if theta is None else theta

    def initial_state(self, theta, n, rng):
        theta = self._resolve(theta)
        m1, p1 = param_column(theta, 4), param_column(theta, 5)
        shape = np.shape(theta)[:-1] + (n,)
        return m1 + np.sqrt(p1) * rng.standard_normal(shape)

    def next_state(self, theta, x_prev, rng):
        theta = self._resolve(theta)
        a, q = param_column(theta, 0), param_column(theta, 1)
        return a * x_prev + np.sqrt(q) * rng.standard_normal(np.shape(x_prev))

    def sample_observation(self, theta, x, rng):
        theta = self._resolve(theta)
        c, r = param_column(theta, 2), param_column(theta, 3)
        return c * x + np.sqrt(r) * rng.standard_normal(np.shape(x))

    def log_obs_density(self, theta, x, y):
        theta = self._resolve(theta)
        c, r = param_column(theta, 2), param_column(theta, 3)
        return _normal_logpdf(y, c * x, r)


def lg_model(p: LgParams = None) -> ModelSpec:
    if p is not None and not isinstance(p, LgParams):
        raise TypeError(f"expected LgParams, got {type(p).__name__}")
    return LinearGaussian(p)


def lg_prior(p: LgParams, support=None) -> UniformBoxPrior:
    """Uniform box over the named LG parameters; the rest stay fixed at p."""
    support = support or {}
    unknown = set(support) - set(LG_PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown LG parameters {sorted(unknown)}")
    values = p.to_vector()
    lower = [support.get(name, (v, v))[0] for name, v in zip(LG_PARAM_NAMES, values)]
    upper = [support.get(name, (v, v))[1] for name, v in zip(LG_PARAM_NAMES, values)]
    return UniformBoxPrior(lower, upper, LG_PARAM_NAMES)


def _lg_first_moment(theta, x):
    a, c = param_column(theta, 0), param_column(theta, 2)
    return c * a * x


def _lg_second_moment(theta, x):
    a, q, c, r = (param_column(theta, k) for k in range(4))
    return c**2 * (a**2 * x**2 + q) + r


def lg_f1() -> FilterFunctional:
    return FilterFunctional("f1", _lg_first_moment)


def lg_f2() -> FilterFunctional:
    return FilterFunctional("f2", _lg_second_moment)


def simulate(spec: ModelSpec, theta, T: int, rng: RngStream):
    """
    Forward-simulate x_{1:T} and y_{1:T} from the generative model.

    Returns two float arrays of length T; the result depends only on rng. A model
    bound to its own parameters accepts theta=None.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
    gen = rng.generator()
    states = np.empty(T)
    obs = np.empty(T)
    x = spec.initial_state(theta, 1, gen)
    for t in range(T):
        if t > 0:
            x = spec.next_state(theta, x, gen)
        states[t] = x[0]
        obs[t] = spec.sample_observation(theta, x, gen)[0]
    return states, obs
