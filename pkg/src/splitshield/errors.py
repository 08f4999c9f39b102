"""Exception types shared across the package.

Argument problems raise the builtin ``ValueError``; everything below marks a
failure that callers may want to catch and handle specifically.
"""


class SplitShieldError(Exception):
    """Base class for package errors."""


class DegenerateDataError(SplitShieldError):
    """Input has no spread (e.g. every row identical)."""


class UndefinedAUCError(SplitShieldError):
    """AUC requested for single-class labels."""


class SingularDivergenceError(SplitShieldError):
    """A Gaussian component has zero variance, so the divergence is infinite."""


class NumericalOverflowError(SplitShieldError):
    pass


class ConvergenceError(SplitShieldError):
    """An iterative routine ran out of iterations.

    ``best`` carries the best iterate found so far.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ProtocolError(SplitShieldError):
    """Messages between the parties do not line up."""


class ProtocolAbortError(ProtocolError):
    """The transport failed mid-protocol."""


class ConsistencyError(ProtocolError):
    """Two phases of the set-union protocol disagree on sizes."""


class CollisionError(ProtocolError):
    """Distinct identifiers ended up with the same group element."""


class StrategyUnavailableError(SplitShieldError):
    """A synthetic-data strategy lacks the context it needs."""
