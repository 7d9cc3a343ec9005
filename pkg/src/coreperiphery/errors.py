"""Exception types shared across the package."""


class CorePeripheryError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(CorePeripheryError, ValueError):
    """Structural problem with a community configuration."""


class InvalidInputError(CorePeripheryError, ValueError):
    """An argument lies outside the domain of an operation."""


class AssumptionViolation(CorePeripheryError, ValueError):
    """The configuration breaks one of the standing model assumptions."""


class StrategySpaceError(CorePeripheryError, ValueError):
    """A rate lies strictly between 0 and the rate floor."""


class NotConvergedError(CorePeripheryError):
    """An operation that needs an equilibrium was handed an unconverged result."""
