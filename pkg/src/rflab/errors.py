"""Shared exception types for rflab.

Having a small hierarchy of custom exceptions makes it easier to:
- keep numerical failures close to the point where they happen,
- convert them into user-friendly messages and exit codes in the CLI layer.
"""

from __future__ import annotations

from typing import Any


class RFLabError(Exception):
    """Base exception for user-facing rflab errors."""

    pass


class InvalidMetricError(RFLabError):
    """Lapse not positive, interior radius not positive, or bad grid."""


class DegeneratePoleError(RFLabError):
    """Smooth closure |dpsi/ds| = 1 violated at a pole."""


class ParameterError(RFLabError):
    """A parameter is outside its admissible range."""


class DomainError(RFLabError):
    """A point lies outside the manifold parameterization."""


class SingularityCrossedError(RFLabError):
    """A flow step produced psi <= 0 in the interior."""


class InstabilityError(RFLabError):
    """A flow step produced NaN or infinite values."""


class ConvergenceError(RFLabError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, last_iterate: Any = None) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate


class CoverageError(RFLabError):
    """Requested window or region is not covered by the data."""


class PreconditionError(RFLabError):
    """A formula was evaluated outside its stated range."""


class SolverError(RFLabError):
    """A heat solver lost positivity or conservation."""


class ConstructionFailedError(RFLabError):
    """A cutoff function failed its numerical verification."""

    def __init__(self, message: str, location: tuple[float, float] | None = None) -> None:
        super().__init__(message)
        self.location = location


class NeedsSingularTimeError(RFLabError):
    """The trajectory carries no singular time estimate."""


class ConfigError(RFLabError):
    """The run configuration could not be parsed or validated."""

    def __init__(self, message: str, lineno: int | None = None) -> None:
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class SnapshotError(RFLabError):
    """A snapshot or manifest file is missing or malformed."""
