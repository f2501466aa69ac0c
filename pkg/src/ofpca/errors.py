"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class OfpcaError(Exception):
    """Base class for all package errors."""


class ConfigError(OfpcaError, ValueError):
    """Invalid configuration or argument."""


class DataError(OfpcaError, ValueError):
    """Malformed or inconsistent input data."""


class DomainError(DataError):
    """A location falls outside the spline domain."""


class InitializationError(DataError):
    """Not enough data to initialize the model."""


class NumericalError(OfpcaError, ArithmeticError):
    """A factorization or update failed numerically."""


class StepError(NumericalError):
    """A retraction step was too large to restore feasibility."""


class RankError(NumericalError):
    """A matrix that must have full column rank does not."""


class StateError(OfpcaError, RuntimeError):
    """An object is in a state that does not allow the requested operation."""
