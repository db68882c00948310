"""
Exceptions raised by the filtering library and the experiment CLI.
"""


class ParticleSwarmError(Exception):
    """Base class for every error this package raises on purpose."""


class ModelEvaluationError(ParticleSwarmError):
    """A model sampler or density failed while being evaluated."""


class AllWeightsZero(ParticleSwarmError):
    """Every particle of a filter received zero weight."""

    def __init__(self, message="all particle weights are zero", t=None, filter_index=None, theta=None):
        self.t = t
        self.filter_index = filter_index
        self.theta = theta
        super().__init__(message)

    def __reduce__(self):
        return (type(self), (self.args[0], self.t, self.filter_index, self.theta))

    def with_context(self, t=None, filter_index=None, theta=None):
        """Return a copy carrying whichever context fields are given."""
        return AllWeightsZero(
            "all particle weights are zero",
            t=self.t if t is None else t,
            filter_index=self.filter_index if filter_index is None else filter_index,
            theta=self.theta if theta is None else theta,
        )

    def __str__(self):
        parts = [self.args[0] if self.args else "all particle weights are zero"]
        if self.t is not None:
            parts.append(f"t={self.t}")
        if self.filter_index is not None:
            parts.append(f"filter={self.filter_index}")
        if self.theta is not None:
            parts.append(f"theta={list(self.theta)}")
        return ", ".join(parts)


class FunctionalOverflow(ParticleSwarmError):
    """A filter functional evaluated beyond the representable float range."""


class NegativeVarianceEstimate(ParticleSwarmError):
    """A second-moment estimate fell below the squared first moment."""


class ConfigError(ParticleSwarmError):
    """An experiment config is missing a key or holds an invalid value."""

    def __init__(self, message, key=None):
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}" if key else message)

    def __reduce__(self):
        return (type(self), (self.message, self.key))


class DataError(ParticleSwarmError):
    """An input data file could not be parsed."""
