"""
State-space model abstraction shared by the filters, the swarm and the CLI.

Kernels are vectorized. A parameter argument ``theta`` is an array whose last axis
holds the parameter vector; any leading axes index a block of filters. State arrays
carry the particle axis last, so ``theta`` of shape (b, param_dim) pairs with particles
of shape (b, n). Every sampler draws only from the generator it is handed; a
``RowStreams`` object can stand in for a generator when a block of filters advances
together.

All densities and weights are natural logarithms; -inf means zero weight.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.errors import ModelEvaluationError
from src.logger import get_logger
from src.rng import RngStream

logger = get_logger(__name__)


def param_column(theta, k):
    """Parameter k of every filter in the block, shaped to broadcast against particles."""
    return np.asarray(theta, dtype=float)[..., k, None]


class ModelSpec(ABC):
    """
    A parameterized state-space model together with its particle proposal.

    Generative kernels (``initial_state``, ``next_state``, ``sample_observation``)
    describe the model itself and drive simulation. Proposal kernels
    (``sample_initial``, ``sample_transition``) and ``log_unnorm_weight`` drive the
    particle filter: the weight is log dT/dQ, the density of the unnormalized
    transition T = F·g against the proposal Q.
    """

    state_dim = 1
    obs_dim = 1
    param_names: tuple = ()

    @property
    def param_dim(self):
        return len(self.param_names)

    # generative model

    @abstractmethod
    def initial_state(self, theta, n, rng):
        """Draw n states from the initial distribution mu_theta."""

    @abstractmethod
    def next_state(self, theta, x_prev, rng):
        """Draw one successor per state from F_theta(x_prev, .)."""

    @abstractmethod
    def sample_observation(self, theta, x, rng):
        """Draw one observation per state from g_theta(x, .)."""

    @abstractmethod
    def log_obs_density(self, theta, x, y):
        """log g_theta(x, y)."""

    # particle proposal

    @abstractmethod
    def sample_initial(self, theta, n, y, rng):
        """Draw n particles from the time-1 proposal Q_{theta,y1}."""

    @abstractmethod
    def sample_transition(self, theta, x_prev, y, rng):
        """Mutate each particle through Q_{theta,y_t}(x_prev, .)."""

    @abstractmethod
    def log_unnorm_weight(self, theta, x_prev, x, y):
        """
        log dT_{theta,y}(x_prev, .)/dQ_{theta,y}(x_prev, .)(x).

        ``x_prev`` is None at t = 1. Never +inf; -inf marks a zero weight.
        """


class BootstrapModel(ModelSpec):
    """
    Bootstrap configuration: the proposal is the model's own dynamics.

    The weight then reduces to the observation density and is computed by the very
    same call.
    """

    bootstrap = True

    def sample_initial(self, theta, n, y, rng):
        return self.initial_state(theta, n, rng)

    def sample_transition(self, theta, x_prev, y, rng):
        return self.next_state(theta, x_prev, rng)

    def log_unnorm_weight(self, theta, x_prev, x, y):
        return self.log_obs_density(theta, x, y)


@dataclass(frozen=True)
class FilterFunctional:
    """A test function f(theta, x) whose filtering expectation is estimated."""

    name: str
    eval: Callable

    def __call__(self, theta, x):
        return self.eval(theta, x)


def _one(theta, x):
    return np.ones(np.broadcast_shapes(np.shape(param_column(theta, 0)), np.shape(x)))


def _identity(theta, x):
    return np.asarray(x, dtype=float) + np.zeros(np.shape(param_column(theta, 0)))


def constant_one():
    return FilterFunctional("one", _one)


def state_identity():
    return FilterFunctional("x", _identity)


class PriorSpec(ABC):
    """
    A prior pi over the parameter space together with the proposal rho it is
    sampled through. Both have densities with respect to Lebesgue measure on the
    support box.
    """

    names: tuple = ()

    @abstractmethod
    def log_pi_density(self, theta):
        """log pi(theta)."""

    @abstractmethod
    def sample_rho(self, rng):
        """Draw one parameter vector from rho."""

    @abstractmethod
    def log_rn_derivative(self, theta):
        """log dpi/drho(theta)."""

    @property
    @abstractmethod
    def rn_upper_bound(self):
        """A finite bound on dpi/drho."""


class UniformBoxPrior(PriorSpec):
    """
    Independent uniform priors on a box, sampled directly (rho = pi).

    A zero-width side fixes that parameter at a single value.
    """

    def __init__(self, lower, upper, names=()):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if np.any(self.upper < self.lower) or not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise ValueError(f"invalid support box [{self.lower}, {self.upper}]")
        self.names = tuple(names) or tuple(f"p{k}" for k in range(self.lower.size))
        width = self.upper - self.lower
        self._free = width > 0
        self._log_volume = float(np.sum(np.log(width[self._free])))

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all((theta >= self.lower) & (theta <= self.upper)))

    def log_pi_density(self, theta):
        return -self._log_volume if self.contains(theta) else -np.inf

    def sample_rho(self, rng):
        return self.lower + (self.upper - self.lower) * rng.random(self.lower.size)

    def log_rn_derivative(self, theta):
        return 0.0

    @property
    def rn_upper_bound(self):
        return 1.0


class BoxProposalPrior(PriorSpec):
    """
    Uniform prior box sampled through a wider uniform proposal box.

    dpi/drho is vol(proposal)/vol(prior) inside the prior box and zero outside.
    """

    def __init__(self, prior: UniformBoxPrior, proposal: UniformBoxPrior):
        if not (np.all(proposal.lower <= prior.lower) and np.all(proposal.upper >= prior.upper)):
            raise ValueError("the proposal box must contain the prior box")
        if np.any(prior._free != proposal._free):
            raise ValueError("prior and proposal must fix the same parameters")
        self.prior = prior
        self.proposal = proposal
        self.names = prior.names

    def log_pi_density(self, theta):
        return self.prior.log_pi_density(theta)

    def sample_rho(self, rng):
        return self.proposal.sample_rho(rng)

    def log_rn_derivative(self, theta):
        log_pi = self.prior.log_pi_density(theta)
        if log_pi == -np.inf:
            return -np.inf
        return log_pi - self.proposal.log_pi_density(theta)

    @property
    def rn_upper_bound(self):
        return float(np.exp(self.proposal._log_volume - self.prior._log_volume))


class EmpiricalPrior(PriorSpec):
    """
    A working prior: draws uniformly from a stored parameter sample, such as an
    outdated posterior sample, with caller-supplied log dpi/drho per sample row.

    pi itself is known only if the caller passes ``log_pi``, one log-density per
    row; without it ``log_pi_density`` raises NotImplementedError.
    """

    def __init__(self, samples, log_rn, names=(), rn_upper_bound=None, log_pi=None):
        self.samples = np.atleast_2d(np.asarray(samples, dtype=float))
        self.log_rn = np.asarray(log_rn, dtype=float)
        if self.log_rn.shape != (self.samples.shape[0],):
            raise ValueError("log_rn needs one entry per sample row")
        self.names = tuple(names) or tuple(f"p{k}" for k in range(self.samples.shape[1]))
        self._bound = float(np.exp(self.log_rn.max())) if rn_upper_bound is None else float(rn_upper_bound)
        self.log_pi = None if log_pi is None else np.asarray(log_pi, dtype=float)
        if self.log_pi is not None and self.log_pi.shape != (self.samples.shape[0],):
            raise ValueError("log_pi needs one entry per sample row")
        self._rows = {row.tobytes(): i for i, row in enumerate(self.samples)}

    def _row(self, theta):
        return self._rows.get(np.asarray(theta, dtype=float).tobytes())

    def log_pi_density(self, theta):
        if self.log_pi is None:
            raise NotImplementedError("log pi is unknown for this empirical prior; pass log_pi per sample row")
        row = self._row(theta)
        return -np.inf if row is None else float(self.log_pi[row])

    def sample_rho(self, rng):
        return self.samples[int(rng.integers(self.samples.shape[0]))].copy()

    def log_rn_derivative(self, theta):
        row = self._row(theta)
        return -np.inf if row is None else float(self.log_rn[row])

    @property
    def rn_upper_bound(self):
        return self._bound


@dataclass
class ProbeRecord:
    theta: np.ndarray
    x: float
    y: float
    log_weight_initial: float
    log_weight_transition: float
    log_obs_density: float
    log_rn: float


@dataclass
class ValidationReport:
    probes: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    rn_bound_respected: bool = True

    @property
    def ok(self):
        return not self.violations and self.rn_bound_respected


def validate_model(spec: ModelSpec, prior: PriorSpec, probe_count: int, rng: RngStream) -> ValidationReport:
    """
    Probe a model with (theta, x, y) triples drawn through its own samplers.

    Flags +inf log-weights, NaN densities and RN derivatives above the declared
    bound. Purely diagnostic: passing does not prove the filter's assumptions.
    """
    if probe_count < 1:
        raise ValueError(f"probe_count must be at least 1, got {probe_count}")

    report = ValidationReport()
    log_bound = np.log(prior.rn_upper_bound)
    for k in range(probe_count):
        gen = rng.split(k).generator()
        try:
            theta = np.asarray(prior.sample_rho(gen), dtype=float)
            x1 = spec.initial_state(theta, 1, gen)
            y1 = float(spec.sample_observation(theta, x1, gen)[0])
            x1_prop = spec.sample_initial(theta, 1, y1, gen)
            x2 = spec.next_state(theta, x1, gen)
            y2 = float(spec.sample_observation(theta, x2, gen)[0])
            x2_prop = spec.sample_transition(theta, x1, y2, gen)
        except Exception as e:
            raise ModelEvaluationError(f"sampler failed on probe {k}: {e}") from e

        w1 = float(spec.log_unnorm_weight(theta, None, x1_prop, y1)[0])
        w2 = float(spec.log_unnorm_weight(theta, x1, x2_prop, y2)[0])
        lg = float(spec.log_obs_density(theta, x2, y2)[0])
        lr = float(prior.log_rn_derivative(theta))
        report.probes.append(ProbeRecord(theta, float(x2[0]), y2, w1, w2, lg, lr))

        for label, value in (("initial log-weight", w1), ("transition log-weight", w2)):
            if value == np.inf:
                report.violations.append(f"probe {k}: {label} is +inf at theta={theta.tolist()}")
        for label, value in (("initial log-weight", w1), ("transition log-weight", w2),
                             ("observation log-density", lg), ("log dpi/drho", lr)):
            if np.isnan(value):
                report.violations.append(f"probe {k}: {label} is NaN at theta={theta.tolist()}")
        if lr > log_bound + 1e-12:
            report.rn_bound_respected = False
            report.violations.append(f"probe {k}: dpi/drho exceeds its bound {prior.rn_upper_bound}")

    for violation in report.violations:
        logger.warning(violation)
    logger.info(f"Validated {type(spec).__name__} on {probe_count} probes, {len(report.violations)} violations")
    return report
