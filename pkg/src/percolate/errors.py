"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Raised when inputs (parameters, policies, CLI configs) are malformed."""


class SolverError(RuntimeError):
    """Raised when a numerical routine cannot meet its accuracy contract."""
