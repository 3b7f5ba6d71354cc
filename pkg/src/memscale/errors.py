"""Shared exception hierarchy.

The CLI maps these onto exit codes: usage errors exit 1, data errors
exit 2, upstream-endpoint errors exit 3.
"""

from __future__ import annotations


class MemscaleError(Exception):
    """Base class for all harness errors."""


class UsageError(MemscaleError):
    """Bad invocation or configuration supplied by the caller."""


class DataError(MemscaleError):
    """Invalid, inconsistent, or missing input data."""


class EndpointError(MemscaleError):
    """An upstream endpoint (agent model, judge, adapter) failed."""
