"""Exception hierarchy shared by the library, the CLI, and the HTTP service.

Each class carries the process exit code the CLI uses when the error
escapes to the top level (0 ok, 2 usage, 3 data/format, 4 numeric, 5 I/O).
"""

from __future__ import annotations


class UflowError(Exception):
    """Base class for all uflow errors."""

    exit_code = 1
    code = "error"


class UsageError(UflowError):
    """Invalid arguments or configuration supplied by the caller."""

    exit_code = 2
    code = "usage"


class DataFormatError(UflowError):
    """Malformed or out-of-contract data: bad magic, wrong dims, truncation."""

    exit_code = 3
    code = "data_format"


class NumericError(UflowError):
    """Numerically invalid input or result (non-finite values, zero norms)."""

    exit_code = 4
    code = "numeric"


class ProviderError(UflowError):
    """An external embedding provider failed or returned garbage."""

    exit_code = 5
    code = "provider"
