"""Exception types shared across the package.

The CLI maps these onto process exit codes; library callers catch them
like any other exception.
"""


class ArealTrendError(Exception):
    """Base class for all package errors."""


class InputError(ArealTrendError):
    """Malformed or unreadable input data (CLI exit code 2)."""


class DimensionMismatchError(ArealTrendError):
    """Inconsistent unit sets or shapes between inputs (CLI exit code 3)."""


class NumericalError(ArealTrendError):
    """Numerical failure, e.g. a factorization of an indefinite matrix (CLI exit code 4)."""


class IncompleteRunError(ArealTrendError):
    """An output directory is missing artifacts needed by a follow-up command (CLI exit code 5)."""
