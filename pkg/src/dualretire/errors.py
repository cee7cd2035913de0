"""Exception and warning types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class WellPosednessError(ValueError):
    """Parameter set violates a well-posedness condition of the model."""


class NonConvergenceError(RuntimeError):
    """Iterative solve failed to reach its tolerance within the caps.

    Carries ``diagnostics`` with the worst residual and its node so callers
    can report where the iteration stalled.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RangeError(ValueError):
    """Requested point lies outside the solved grid's resolved range."""


class DegeneracyWarning(UserWarning):
    """Second derivative hit its floor where a curvature ratio was needed."""


class TopologyWarning(UserWarning):
    """Region layout violates the expected single-interval structure."""
