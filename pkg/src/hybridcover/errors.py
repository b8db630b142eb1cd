"""Exception types raised across the package."""


class HybridCoverError(Exception):
    """Base class for all package errors."""


class ConfigError(HybridCoverError, ValueError):
    """Invalid or inconsistent configuration."""


class InfeasibleError(HybridCoverError):
    """An agent ran out of energy away from the charging station."""

    def __init__(self, message, agent=None, time=None, trajectory=None):
        super().__init__(message)
        self.agent = agent
        self.time = time
        self.trajectory = trajectory


class SchedulingError(HybridCoverError):
    """The charging-station schedule violated one of its invariants."""


class SingularEventError(HybridCoverError, ArithmeticError):
    """An event-time derivative has a vanishing denominator."""


class EvaluationError(HybridCoverError):
    """A simulation inside the optimiser failed; keeps θ and the cause."""

    def __init__(self, message, theta=None, cause=None):
        super().__init__(message)
        self.theta = theta
        self.cause = cause
