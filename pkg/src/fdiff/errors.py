"""Exception types raised across the package.

Every error carries a plain message; CLI exit codes are derived from the
class hierarchy (``ConfigError`` -> 1, ``NumericalFailure`` -> 2,
``CorruptFile``/``OSError`` -> 3).
"""


class FDiffError(Exception):
    """Base class for all package errors."""


class InvalidShape(FDiffError, ValueError):
    pass


class ShapeMismatch(FDiffError, ValueError):
    pass


class NotScalar(FDiffError, ValueError):
    pass


class NumericalFailure(FDiffError, ArithmeticError):
    """A computation produced NaN/Inf or left its numerically safe range."""


class DegenerateBatch(FDiffError, ValueError):
    """Batch statistics requested over a single element per channel."""


class InvalidSchedule(FDiffError, ValueError):
    pass


class InvalidTimestep(FDiffError, ValueError):
    pass


class InvalidPlan(FDiffError, ValueError):
    pass


class InvalidConfig(FDiffError, ValueError):
    pass


class InvalidReduction(InvalidConfig):
    pass


class EmptyTrajectory(FDiffError, ValueError):
    pass


class InvalidLabel(FDiffError, ValueError):
    pass


class EmptyMask(FDiffError, ValueError):
    pass


class InvalidSplit(FDiffError, ValueError):
    pass


class CorruptFile(FDiffError, OSError):
    pass


class ConfigError(FDiffError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
