"""Exception hierarchy.

The CLI maps the two families onto exit codes: configuration-type errors
exit with 2, numerical failures with 3.
"""


class ChiselError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ChiselError, ValueError):
    """Invalid grid, step size, sampling or config file content."""


class ParameterError(ConfigurationError):
    """Non-physical parameter values (non-positive rates, negative potentials)."""


class ShapeError(ConfigurationError):
    """Array length does not match the grid."""


class DataError(ConfigurationError):
    """Input data unusable for a fit (non-positive values, too few points)."""


class RangeError(ConfigurationError):
    """A sweep does not cover the range an estimator needs."""


class NumericalError(ChiselError, RuntimeError):
    """Overflow, NaN or other breakdown during a computation."""


class ConvergenceError(NumericalError):
    """An iteration ran out of budget before meeting its tolerance."""


class NoFringeError(NumericalError):
    """A fringe has no modulation distinguishable from zero."""
