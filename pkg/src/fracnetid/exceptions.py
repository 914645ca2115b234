"""Exception types shared across the package."""


class FracnetidError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(FracnetidError, ValueError):
    """Array shapes are mutually inconsistent."""


class CovarianceError(FracnetidError, ValueError):
    """A covariance matrix is not symmetric positive (semi-)definite."""


class NumericalSingularityError(FracnetidError, ArithmeticError):
    """A matrix factorization hit a pivot below the singularity threshold."""


class SingularSystemError(FracnetidError, ArithmeticError):
    """A regression problem is rank-deficient or underdetermined."""


class UnidentifiableInputError(FracnetidError, ValueError):
    """Input maps are identically zero, so inputs cannot be estimated."""


class DataFormatError(FracnetidError, ValueError):
    """A data file or config document failed to parse or validate."""
