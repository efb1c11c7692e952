"""Exception hierarchy. The CLI maps each family to an exit code."""


class KinkFilterError(Exception):
    """Base class for all errors raised by kinkfilter."""


class InputError(KinkFilterError, ValueError):
    """Malformed input data or configuration."""


class ParseError(InputError):
    pass


class MonotonicityError(InputError):
    pass


class ConsistencyError(InputError):
    pass


class SeriesError(InputError):
    """The transform to the regression target is undefined for this data."""


class RankDeficiencyError(KinkFilterError, ValueError):
    pass


class DegenerateProblemError(KinkFilterError, ValueError):
    """The instance sits on a non-differentiable corner of the objective."""


class ConvergenceError(KinkFilterError, RuntimeError):
    """An iterative solver stopped without an optimality certificate.

    The last iterate is kept on ``diagnostic`` so callers can inspect it.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class EnumerationCapError(KinkFilterError, ValueError):
    pass


class BracketError(KinkFilterError, ValueError):
    def __init__(self, message, lo=None, hi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi


class InvariantViolation(KinkFilterError, AssertionError):
    pass
