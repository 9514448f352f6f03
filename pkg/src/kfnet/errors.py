"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: validation problems exit with 1,
numerical failures with 2 and I/O failures (plain ``OSError``) with 3.
"""


class KFNetError(Exception):
    """Base class for all package errors."""


class ValidationError(KFNetError, ValueError):
    """Input data or configuration violates a documented contract."""


class ConfigError(ValidationError):
    """Model or run configuration is inconsistent with the data."""


class TensorInvariantError(ValidationError):
    """A co-occurrence slice is asymmetric, negative or mis-shaped."""

    def __init__(self, message, t=None, i=None, j=None):
        super().__init__(message)
        self.t = t
        self.i = i
        self.j = j


class NumericalError(KFNetError, ArithmeticError):
    """A numerical step (factorisation, filtering, ordinate) broke down."""
