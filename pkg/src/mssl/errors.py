"""Exception types shared across the package."""


class MsslError(Exception):
    """Base class for all package-specific errors."""


class DataValidationError(MsslError, ValueError):
    """Malformed or insufficient input data."""


class LinkValidationError(MsslError, ValueError):
    """A link function triple violates its own contract."""


class SingularMatrixError(MsslError, ValueError):
    """A matrix required to be invertible is singular or too ill-conditioned.

    ``rank`` carries the computed numerical rank when available.
    """

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class ResampleBudgetError(MsslError, RuntimeError):
    """Too many resampled blocks had to be skipped (over the 10% budget)."""


class RegimeError(MsslError, ValueError):
    """Operation called in the wrong n-vs-p regime."""
