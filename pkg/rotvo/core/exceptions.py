"""
Custom exception classes for rotvo.

This module defines specific exception types for the error scenarios of the
odometry engine: bad arguments, relative rotation failures, numerical
breakdowns in rotation averaging, dataset format problems and metrics that
cannot be evaluated.
"""

from pathlib import Path


class RotvoError(Exception):
    """Base exception class for all rotvo-related errors."""

    pass


class InvalidArgumentError(RotvoError, ValueError):
    """Raised when a precondition of an operation is violated."""

    pass


class RelRotError(RotvoError):
    """Raised when no relative rotation can be estimated for a frame pair."""

    pass


class InsufficientCorrespondencesError(RelRotError):
    """Raised when a correspondence set is smaller than the minimal sample."""

    pass


class NoModelError(RelRotError):
    """Raised when RANSAC ends with fewer inliers than the minimal sample."""

    pass


class NumericalError(RotvoError):
    """Raised when the least-squares factorisation fails during IRLS."""

    def __init__(self, message: str, iteration: int, phase: str = ""):
        self.iteration = iteration
        self.phase = phase
        where = f"{phase} sweep {iteration}" if phase else f"sweep {iteration}"
        super().__init__(f"{message} ({where})")


class DatasetError(RotvoError):
    """Raised for dataset I/O and format errors, located by file and line."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        self.reason = message
        super().__init__(self._render())

    def _render(self) -> str:
        if self.path is None:
            return self.reason
        if self.line is None:
            return f"{self.path}: {self.reason}"
        return f"{self.path}:{self.line}: {self.reason}"


class MetricError(RotvoError):
    """Base class for metric evaluation errors."""

    pass


class UnsupportedMetricError(MetricError):
    """Raised when a metric needs data the ground truth does not carry."""

    pass


class EmptyPairSetError(MetricError):
    """Raised when no frame pair qualifies for a distance-based metric."""

    pass


class SynthError(RotvoError):
    """Raised when the synthetic generator cannot produce covisible geometry."""

    pass
