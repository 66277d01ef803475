"""Exception hierarchy shared by the estimators and the CLI."""


class MarMixError(Exception):
    """Base class for all package errors."""


class ConfigError(MarMixError, ValueError):
    """Invalid experiment or estimator configuration."""


class DataError(MarMixError, ValueError):
    """Malformed or unusable input data."""


class NumericalError(MarMixError, ArithmeticError):
    """A computation produced a non-finite or degenerate result."""


class NotSPDError(NumericalError):
    """A covariance matrix failed its Cholesky factorization."""

    def __init__(self, component, message=None):
        self.component = component
        super().__init__(message or f"covariance of component {component} is not positive definite")
