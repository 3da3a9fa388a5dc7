"""Error hierarchy shared by every flowcheck module."""

from __future__ import annotations


class FlowcheckError(Exception):
    """Base class for all errors raised by flowcheck."""


class ConfigError(FlowcheckError):
    """Ill-matched configuration, e.g. values from different atom universes."""


class InputError(FlowcheckError):
    """Malformed or off-grid input data (files, keys, intervals)."""


class ContractViolation(FlowcheckError):
    """A caller broke a documented precondition."""


class InternalInvariantError(FlowcheckError):
    """An internal invariant failed; always a bug, never a user error."""


class InconclusiveError(FlowcheckError):
    """A bounded search hit its cap before reaching a verdict."""
