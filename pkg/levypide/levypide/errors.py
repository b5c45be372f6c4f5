"""
Exception types raised by levypide.

Every error the library raises derives from LevyPideError so callers (and
the command line runner) can tell library failures from programming errors.
The CLI maps the three families below onto its exit codes:

    ParameterDomainError / ConfigError -> 2
    NumericalError                     -> 3
    AssumptionViolation                -> 4
"""


class LevyPideError(Exception):
    """Base class for all levypide errors."""


class ParameterDomainError(LevyPideError, ValueError):
    """A parameter or argument lies outside the domain of an operation."""


class FamilyMismatchError(ParameterDomainError):
    """An operation was handed a Levy measure of the wrong family."""


class ConfigError(LevyPideError, ValueError):
    """A scenario or problem file could not be read or is malformed."""


class AssumptionViolation(LevyPideError):
    """
    A modelling assumption of the feedback model fails, e.g. rho*L >= 1 or a
    feedback denominator that is not positive.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NumericalError(LevyPideError, RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


class QuadratureError(NumericalError):
    def __init__(self, message, last_estimate=None):
        super().__init__(message)
        self.last_estimate = last_estimate


class ConvergenceError(NumericalError):
    def __init__(self, message, last_residual=None, iterations=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class SolverBreakdown(NumericalError):
    """A linear solve or time step produced non-finite values."""
