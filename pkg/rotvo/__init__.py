"""
Rotvo - Rotation-only visual odometry

Estimates camera orientations from bearing correspondences with an
eigenvalue-based relative rotation solver and windowed L1-IRLS rotation
averaging, independent of translation.
"""

from .core.so3 import Rot3
from .core.pipeline import run_sequence
from .core.dataset import load_dataset
from .core.metrics import GroundTruth

__version__ = "0.1.0"
__author__ = "Rotvo Project"

__all__ = [
    "Rot3",
    "run_sequence",
    "load_dataset",
    "GroundTruth",
]
