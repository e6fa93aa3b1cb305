"""
errors.py - exception hierarchy shared by every bimm module.

Each exception carries the process exit code the CLI reports for it:

* 0 success
* 1 usage / configuration / contract violations
* 2 data, dataset and checkpoint problems
* 3 numeric failures (NaN/Inf, failed gradient checks)
"""

from __future__ import annotations

__all__ = [
    "BimmError",
    "ConfigError",
    "UnsupportedConfigError",
    "UsageError",
    "ShapeError",
    "ContractError",
    "DataError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointCorruptionError",
    "NumericError",
]


class BimmError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ConfigError(BimmError, ValueError):
    """A configuration value or combination of values is invalid."""


class UnsupportedConfigError(ConfigError):
    """The configuration is well-formed but names behaviour that is not defined."""


class UsageError(BimmError):
    """Unknown sub-command, flag or malformed command line."""


class ShapeError(BimmError, ValueError):
    """Array extents do not agree with the operation's contract."""


class ContractError(BimmError, ValueError):
    """A caller broke an operation precondition (index range, scalar loss, h=0 ...)."""


class DataError(BimmError):
    """Dataset content is missing, short or inconsistent."""

    exit_code = 2


class CheckpointFormatError(DataError):
    """The file is not a bimm checkpoint (bad magic)."""


class CheckpointVersionError(DataError):
    """The checkpoint was written by an unsupported format version."""


class CheckpointCorruptionError(DataError):
    """The checkpoint is truncated or its contents fail verification."""


class NumericError(BimmError, ArithmeticError):
    """NaN/Inf appeared, or a numerical check failed."""

    exit_code = 3
