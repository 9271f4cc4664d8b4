"""Exception hierarchy shared by every twoscale module.

The CLI maps these onto its exit codes: ConfigError and
UnresolvedOscillationError -> 2, HypothesisError and CentringError -> 3,
SolverError and its subclasses -> 4.
"""


class HomogenizationError(Exception):
    """Base class for all twoscale errors."""


class ConfigError(HomogenizationError):
    """Run configuration could not be parsed or validated."""


class HypothesisError(HomogenizationError):
    """Coefficient data violate positivity, periodicity or the zero-mean condition."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CentringError(HomogenizationError):
    """An oscillating test factor does not have zero mean over the cell."""


class UnresolvedOscillationError(HomogenizationError):
    """The quadrature cannot resolve the requested eps on the given grid."""


class SolverError(HomogenizationError):
    """A nonlinear or linear solve failed; carries the stats and the best iterate."""

    def __init__(self, message, stats=None, best=None):
        super().__init__(message)
        self.stats = stats
        self.best = best


class SingularJacobianError(SolverError):
    pass


class ContinuationExhausted(SolverError):
    pass
