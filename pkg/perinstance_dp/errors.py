"""Exceptions raised by the per-instance DP library."""

from __future__ import annotations


class DataFormatError(ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DimensionError(ValueError):
    pass


class PointNotFoundError(LookupError):
    pass


class SingularMatrixError(ValueError):
    """A Gram or Hessian matrix is not (numerically) positive definite."""

    def __init__(self, message: str, smallest_eigenvalue: float | None = None):
        if smallest_eigenvalue is not None:
            message = f"{message} (smallest eigenvalue {smallest_eigenvalue:.6g})"
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class ParameterError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class UnsupportedMechanismError(ValueError):
    pass
