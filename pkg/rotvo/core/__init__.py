"""
Core components of the rotation-only odometry engine.

This package holds the SO(3) utilities, the relative rotation solver, the
view-graph, rotation averaging, loop closure, the frame pipeline, metrics and
the synthetic data generator.
"""

from .so3 import Rot3
from .relrot import CorrSet, RelRotResult, ransac_relrot, solve_relrot
from .viewgraph import ViewGraph, local_subgraph
from .rotavg import IrlsResult, solve_global, solve_incremental
from .loopclose import LoopCandidate, close_loop, validate_loop
from .pipeline import FrameRecord, PipelineState, StepReport, process_frame, run_sequence
from .dataset import Dataset, DatasetReader, load_dataset
from .metrics import GroundTruth, avg_rot_err, rpe1, rpen, read_ground_truth
from .synth import SynthSpec, gen_correspondences, gen_rotgraph, gen_trajectory
from .exceptions import (
    RotvoError,
    InvalidArgumentError,
    RelRotError,
    NumericalError,
    DatasetError,
    MetricError,
    SynthError,
)
from .config import PipelineConfig, RotvoConfig

__all__ = [
    "Rot3",
    "CorrSet",
    "RelRotResult",
    "ransac_relrot",
    "solve_relrot",
    "ViewGraph",
    "local_subgraph",
    "IrlsResult",
    "solve_global",
    "solve_incremental",
    "LoopCandidate",
    "close_loop",
    "validate_loop",
    "FrameRecord",
    "PipelineState",
    "StepReport",
    "process_frame",
    "run_sequence",
    "Dataset",
    "DatasetReader",
    "load_dataset",
    "GroundTruth",
    "avg_rot_err",
    "rpe1",
    "rpen",
    "read_ground_truth",
    "SynthSpec",
    "gen_correspondences",
    "gen_rotgraph",
    "gen_trajectory",
    "RotvoError",
    "InvalidArgumentError",
    "RelRotError",
    "NumericalError",
    "DatasetError",
    "MetricError",
    "SynthError",
    "PipelineConfig",
    "RotvoConfig",
]
