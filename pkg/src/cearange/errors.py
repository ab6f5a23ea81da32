"""Shared exception types for the cearange package.

Module-specific failures (codec decode errors, detection retrain rejection,
aggregation admissibility) live next to their modules; everything that the
engine or CLI has to route on is defined here.
"""

from __future__ import annotations


class CeaRangeError(Exception):
    """Base class for all package errors."""


class ConfigError(CeaRangeError):
    """A scenario, fixture, or parameter set is invalid (CLI exit code 1)."""


class NumericDivergenceError(CeaRangeError):
    """A simulated state field became non-finite (CLI exit code 2)."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class UnknownStreamError(CeaRangeError):
    """A random draw was requested from a stream that was never registered."""


class UnreachableLevelError(CeaRangeError):
    """A closed-form crossing time has no solution for the given inputs."""


class PhysicsRangeError(CeaRangeError):
    """An input is outside the validity range of a physical correlation."""
