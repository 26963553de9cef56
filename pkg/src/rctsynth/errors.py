"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericError` to exit code 3.
"""

from __future__ import annotations


class RCTSynthError(Exception):
    """Base class for all package errors."""


class ValidationError(RCTSynthError, ValueError):
    """Bad input: malformed schema, out-of-bounds cell, inconsistent design."""

    def __init__(self, message: str, *, source: str | None = None,
                 row: int | None = None, column: str | None = None):
        self.source = source
        self.row = row
        self.column = column
        where = []
        if source is not None:
            where.append(str(source))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NumericError(RCTSynthError, ArithmeticError):
    """A numerical routine could not produce a usable result."""


class RankDeficientError(NumericError):
    """Design matrix is not of full column rank."""

    def __init__(self, message: str, column: str | None = None):
        self.column = column
        super().__init__(message)


class GridTooLargeError(ValidationError):
    """Histogram cell count exceeds the configured ceiling."""
