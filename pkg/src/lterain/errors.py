"""Exception hierarchy shared by every stage.

Each class maps to one CLI exit code so failures stay machine-parseable.
"""

from __future__ import annotations


class LteRainError(Exception):
    """Base class for all errors raised deliberately by this package."""

    exit_code = 1


class DataError(LteRainError, ValueError):
    """Input data violates a documented invariant (range, schema, NaN...)."""

    exit_code = 5


class ConfigError(LteRainError, ValueError):
    """A configuration value is missing or invalid."""

    exit_code = 4


class FormatError(LteRainError, ValueError):
    """A serialized artifact is truncated, corrupt or of the wrong version."""

    exit_code = 6


class MissingInputError(LteRainError, FileNotFoundError):
    """An input artifact required by a stage does not exist."""

    exit_code = 3


class InfeasibleError(LteRainError, ValueError):
    """An optimization problem has no feasible solution."""

    exit_code = 7


class TrainingError(LteRainError, RuntimeError):
    """Training diverged (NaN/Inf loss) or was set up inconsistently."""

    exit_code = 8
