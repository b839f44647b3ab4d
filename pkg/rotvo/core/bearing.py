"""
Calibrated pinhole model: pixels to unit bearing vectors.

No lens distortion is modelled; inputs are assumed undistorted.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import InvalidArgumentError


@dataclass(frozen=True, slots=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(values)):
            raise InvalidArgumentError(f"Intrinsics must be finite, got {values}")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise InvalidArgumentError(
                f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )

    def project(self, bearings: ArrayLike) -> NDArray[np.float64]:
        """Inverse of :func:`pixel_to_bearing` for vectors in front of the camera."""
        b = np.atleast_2d(np.asarray(bearings, dtype=np.float64))
        u = self.fx * b[:, 0] / b[:, 2] + self.cx
        v = self.fy * b[:, 1] / b[:, 2] + self.cy
        return np.column_stack([u, v])


def pixel_to_bearing(pixels: ArrayLike, k: Intrinsics) -> NDArray[np.float64]:
    """Map pixel coordinates (shape (2,) or (N, 2)) to unit bearings with z > 0."""
    p = np.asarray(pixels, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[1] != 2 or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("pixel_to_bearing expects finite (u, v) coordinates")
    rays = np.column_stack(
        [(p[:, 0] - k.cx) / k.fx, (p[:, 1] - k.cy) / k.fy, np.ones(len(p))]
    )
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    return rays[0] if single else rays


def normalize_bearings(vectors: ArrayLike) -> NDArray[np.float64]:
    """Normalise pre-computed bearings, rejecting zero, non-finite or rear-facing rays."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.shape[1] != 3 or not np.all(np.isfinite(v)):
        raise InvalidArgumentError("Bearings must be finite 3-vectors")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidArgumentError("Bearing vectors must be nonzero")
    v = v / norms
    if np.any(v[:, 2] <= 0.0):
        raise InvalidArgumentError("Bearing vectors must point in front of the camera (z > 0)")
    return v
