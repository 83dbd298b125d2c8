"""Exception types shared across the package."""


class JadeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(JadeError, ValueError):
    """Operator or data dimensions are inconsistent or too small."""


class ParameterError(JadeError, ValueError):
    """A tuning or configuration parameter is out of its valid range."""


class DataError(JadeError, ValueError):
    """Input data violate a structural requirement (NaNs, counts > reads, ...)."""


class UnderdeterminedError(JadeError, ValueError):
    """Fit requested on data with too few usable observations."""


class NumericalError(JadeError, RuntimeError):
    """A numerical routine failed (factorization breakdown, NaN propagation)."""


class UndefinedRateError(JadeError, ValueError):
    """A true/false positive rate is undefined for a degenerate truth mask."""
