"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Input data is malformed, inconsistent or insufficient."""


class ModelFileError(DataError):
    """A persisted model file cannot be read or has the wrong schema."""


class NumericError(ArithmeticError):
    """Training or evaluation produced non-finite numbers."""
