"""
Synthetic datasets: ground-truth trajectories, bearing correspondences with
noise and outliers, loop candidates, and noisy rotation graphs.

Cameras look along +z with +y pointing down; the vehicle drives in the world
x-z plane and yaw is a rotation about the world y axis. Every random draw comes
from a stream derived from the seed and the frame pair, so outputs are
reproducible and independent of generation order.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .bearing import Intrinsics
from .dataset import (
    INTRINSICS_FILE,
    LOOPS_FILE,
    MATCHES_FILE,
    write_correspondences,
    write_intrinsics,
)
from .exceptions import InvalidArgumentError, SynthError
from .logging import get_logger
from .loopclose import LoopCandidate
from .metrics import GroundTruth, write_ground_truth
from .pipeline import FrameRecord
from .relrot import CorrSet
from .seeds import derive_rng
from .so3 import Rot3, exp
from .viewgraph import ViewGraph

logger = get_logger()

MOTIONS = ("drive_loop", "pure_rotation", "mixed")
TRUTH_FILE = "truth.txt"
INLIERS_FILE = "inliers.txt"
OUTLIER_EDGES_FILE = "outliers.txt"
GRAPH_FILE = "graph.txt"

KITTI_INTRINSICS = Intrinsics(fx=718.856, fy=718.856, cx=607.1928, cy=185.2157)

COVISIBILITY_ATTEMPTS = 10
FOV_WIDENING = 1.25
MAX_HALF_FOV_DEG = 80.0


@dataclass
class SynthSpec:
    """Parameters of a synthetic sequence.

    ``outlier_frac`` applies per correspondence for bearing datasets and per
    edge for rotation graphs. Noise values are radians.
    """

    n_frames: int = 200
    motion: str = "drive_loop"
    n_points: int = 200
    bearing_noise: float = 0.0
    outlier_frac: float = 0.0
    rel_rot_noise: float = 0.0
    loop_pairs: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    f_window: int = 4
    step_length: float = 1.0  # meters per frame along the path
    turns: int = 4
    turn_radius_frac: float = 0.08  # of the loop perimeter
    wobble: float = math.radians(1.0)
    half_fov: float = math.radians(35.0)
    depth_range: tuple[float, float] = (5.0, 50.0)
    chord_frac: float = 0.0
    pixels: bool = False
    intrinsics: Intrinsics = KITTI_INTRINSICS

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvalidArgumentError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.motion not in MOTIONS:
            raise InvalidArgumentError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if not 0.0 <= self.outlier_frac < 1.0:
            raise InvalidArgumentError(f"outlier_frac must lie in [0, 1), got {self.outlier_frac}")
        if not 0.0 <= self.chord_frac <= 1.0:
            raise InvalidArgumentError(f"chord_frac must lie in [0, 1], got {self.chord_frac}")
        if min(self.bearing_noise, self.rel_rot_noise, self.wobble) < 0.0:
            raise InvalidArgumentError("noise levels must be non-negative")
        if self.n_points < 1 or self.f_window < 1 or self.turns < 1:
            raise InvalidArgumentError("n_points, f_window and turns must be >= 1")
        if not 0.0 < self.depth_range[0] < self.depth_range[1]:
            raise InvalidArgumentError(f"invalid depth_range {self.depth_range}")
        for j, k in self.loop_pairs:
            if not 0 <= j < k < self.n_frames:
                raise InvalidArgumentError(f"loop pair ({j}, {k}) out of range")

    def pairs(self) -> list[tuple[int, int]]:
        """Sequential pairs: each frame against the previous ``f_window`` frames."""
        return [
            (j, k)
            for k in range(1, self.n_frames)
            for j in range(max(0, k - self.f_window), k)
        ]


# -- trajectories -------------------------------------------------------------


def _yaw_pitch_roll(yaw: NDArray, pitch: NDArray, roll: NDArray) -> list[Rot3]:
    mats = Rotation.from_euler("YXZ", np.column_stack([yaw, pitch, roll])).as_matrix()
    return [Rot3.from_matrix(m) for m in mats.reshape(-1, 3, 3)]


def _drive_path(s: NDArray[np.float64], spec: SynthSpec, perimeter: float):
    """Heading and position along a rounded regular polygon of given perimeter."""
    radius = spec.turn_radius_frac * perimeter
    straight = (perimeter - 2.0 * math.pi * radius) / spec.turns
    if straight <= 0.0:
        raise InvalidArgumentError("turn radius too large for the loop perimeter")
    arc = 2.0 * math.pi * radius / spec.turns
    turn = 2.0 * math.pi / spec.turns

    heading = np.empty(len(s))
    position = np.zeros((len(s), 3))
    piece = straight + arc
    for idx, si in enumerate(s):
        side = min(int(si // piece), spec.turns - 1)
        psi0 = side * turn
        p0 = _corner_start(side, straight, radius, turn)
        local = si - side * piece
        fwd0 = np.array([math.sin(psi0), 0.0, math.cos(psi0)])
        if local <= straight:
            heading[idx] = psi0
            position[idx] = p0 + local * fwd0
        else:
            psi = psi0 + (local - straight) / radius
            right0 = np.array([math.cos(psi0), 0.0, -math.sin(psi0)])
            right = np.array([math.cos(psi), 0.0, -math.sin(psi)])
            center = p0 + straight * fwd0 + radius * right0
            heading[idx] = psi
            position[idx] = center - radius * right
    return heading, position


def _corner_start(side: int, straight: float, radius: float, turn: float) -> NDArray[np.float64]:
    """Start of straight ``side``: sum of the chords of all earlier pieces."""
    p = np.zeros(3)
    for i in range(side):
        psi0 = i * turn
        fwd0 = np.array([math.sin(psi0), 0.0, math.cos(psi0)])
        right0 = np.array([math.cos(psi0), 0.0, -math.sin(psi0)])
        psi1 = psi0 + turn
        right1 = np.array([math.cos(psi1), 0.0, -math.sin(psi1)])
        p = p + straight * fwd0 + radius * (right0 - right1)
    return p


def stationary_mask(spec: SynthSpec) -> NDArray[np.bool_]:
    """Frames whose position does not change (pure rotation segments)."""
    n = spec.n_frames
    if spec.motion == "pure_rotation":
        return np.ones(n, dtype=bool)
    mask = np.zeros(n, dtype=bool)
    if spec.motion == "mixed" and n >= 6:
        mask[n // 3 : n // 2] = True
    return mask


def gen_trajectory(spec: SynthSpec) -> GroundTruth:
    """Smooth ground-truth orientations and positions; the first pose is identity."""
    n = spec.n_frames
    t = np.arange(n, dtype=np.float64)

    if spec.motion == "pure_rotation":
        period = max(n / 2.0, 8.0)
        yaw = math.radians(45.0) * np.sin(2.0 * math.pi * t / period)
        pitch = spec.wobble * np.sin(2.0 * math.pi * t / (period / 3.0))
        position = np.zeros((n, 3))
    else:
        stationary = stationary_mask(spec)
        # Arc-length advances only on moving frames; the loop closes at the last one
        moving = np.concatenate([[0.0], np.cumsum(~stationary[1:])]).astype(np.float64)
        n_moving = max(moving[-1] + 1.0, 1.0)
        perimeter = n_moving * spec.step_length
        s = moving * perimeter / n_moving
        yaw, position = _drive_path(s, spec, perimeter)
        if stationary.any():
            idx = np.flatnonzero(stationary)
            phase = (idx - idx[0]) / max(len(idx), 1)
            yaw[idx] += math.radians(30.0) * np.sin(math.pi * phase)
        pitch = spec.wobble * np.sin(2.0 * math.pi * 3.0 * s / perimeter)
    roll = 0.5 * pitch
    rotations = _yaw_pitch_roll(yaw, pitch, roll)
    return GroundTruth(tuple(range(n)), tuple(rotations), position)


# -- correspondences ----------------------------------------------------------


@dataclass
class PairData:
    corr: CorrSet
    inliers: NDArray[np.bool_]


@dataclass
class SynthDataset:
    spec: SynthSpec
    truth: GroundTruth
    pairs: dict[tuple[int, int], PairData]
    loops: dict[tuple[int, int], PairData]

    def records(self) -> list[FrameRecord]:
        """In-memory frame records, equivalent to writing and loading the dataset."""
        pairs: dict[int, dict[int, CorrSet]] = {}
        for (j, k), data in self.pairs.items():
            pairs.setdefault(k, {})[j] = data.corr
        loops: dict[int, list[LoopCandidate]] = {}
        for (j, k), data in self.loops.items():
            loops.setdefault(k, []).append(LoopCandidate(j, k, data.corr))
        return [
            FrameRecord(k, pairs.get(k, {}), tuple(loops.get(k, ())))
            for k in range(self.spec.n_frames)
        ]

    def write(self, out_dir: str | Path) -> Path:
        """Write the pipeline layout plus ``truth.txt`` and the ``inliers.txt`` sidecar."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = "PAIR" if self.spec.pixels else "BPAIR"
        write_correspondences(out / MATCHES_FILE, self._rows(self.pairs), tag)
        if self.loops:
            write_correspondences(out / LOOPS_FILE, self._rows(self.loops), "LOOP")
        if self.spec.pixels:
            write_intrinsics(out / INTRINSICS_FILE, self.spec.intrinsics)
        write_ground_truth(out / TRUTH_FILE, self.truth)
        with (out / INLIERS_FILE).open("w") as fh:
            for kind, table in (("PAIR", self.pairs), ("LOOP", self.loops)):
                for (j, k), data in table.items():
                    bits = "".join("1" if b else "0" for b in data.inliers)
                    fh.write(f"{kind} {j} {k} {bits}\n")
        logger.info(f"Wrote synthetic dataset to {out}")
        return out

    def _rows(self, table: dict[tuple[int, int], PairData]):
        for key, data in table.items():
            if self.spec.pixels:
                k = self.spec.intrinsics
                rows = np.column_stack([k.project(data.corr.f), k.project(data.corr.f_prime)])
            else:
                rows = np.column_stack([data.corr.f, data.corr.f_prime])
            yield key, rows


def _random_rays(rng: np.random.Generator, n: int, half_fov: float) -> NDArray[np.float64]:
    extent = math.tan(half_fov)
    xy = rng.uniform(-extent, extent, size=(n, 2))
    rays = np.column_stack([xy, np.ones(n)])
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _perturb(rng: np.random.Generator, bearings: NDArray[np.float64], sigma: float) -> NDArray[np.float64]:
    """Rotate each bearing about a random perpendicular axis by |N(0, sigma)|."""
    if sigma == 0.0:
        return bearings
    axis = np.cross(bearings, rng.standard_normal(bearings.shape))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = np.abs(rng.normal(0.0, sigma, size=(len(bearings), 1)))
    return bearings * np.cos(angle) + np.cross(axis, bearings) * np.sin(angle)


def _sample_pair(truth: GroundTruth, j: int, k: int, spec: SynthSpec) -> PairData:
    rng = derive_rng(spec.seed, j, k)
    Rj, Rk = truth.rotations[j].matrix(), truth.rotations[k].matrix()
    pj, pk = truth.positions[j], truth.positions[k]
    near, far = spec.depth_range
    half_fov = spec.half_fov

    for attempt in range(COVISIBILITY_ATTEMPTS):
        extent = math.tan(half_fov)
        f_parts, fp_parts, have = [], [], 0
        for _ in range(20):
            rays = _random_rays(rng, 4 * spec.n_points, half_fov)
            depth = rng.uniform(near, far, size=(len(rays), 1))
            world = pj + (depth * rays) @ Rj.T
            in_k = (world - pk) @ Rk
            z = in_k[:, 2]
            visible = (z > 1e-6) & (np.abs(in_k[:, 0]) < extent * z) & (np.abs(in_k[:, 1]) < extent * z)
            f_parts.append(rays[visible])
            fp_parts.append(in_k[visible] / np.linalg.norm(in_k[visible], axis=1, keepdims=True))
            have += int(visible.sum())
            if have >= spec.n_points:
                break
        if have >= spec.n_points:
            f = np.concatenate(f_parts)[: spec.n_points]
            fp = np.concatenate(fp_parts)[: spec.n_points]
            break
        half_fov = min(half_fov * FOV_WIDENING, math.radians(MAX_HALF_FOV_DEG))
        logger.debug(f"Pair ({j}, {k}): widening field of view (attempt {attempt + 1})")
    else:
        raise SynthError(
            f"Pair ({j}, {k}): no covisible geometry after {COVISIBILITY_ATTEMPTS} attempts"
        )

    f = _perturb(rng, f, spec.bearing_noise)
    fp = _perturb(rng, fp, spec.bearing_noise)

    inliers = np.ones(spec.n_points, dtype=bool)
    n_out = int(round(spec.outlier_frac * spec.n_points))
    if n_out:
        idx = rng.permutation(spec.n_points)[:n_out]
        fp[idx] = _random_rays(rng, n_out, half_fov)
        inliers[idx] = False
    return PairData(CorrSet(f, fp), inliers)


def gen_correspondences(spec: SynthSpec, truth: GroundTruth | None = None) -> SynthDataset:
    """Bearing correspondences for every sequential pair and every loop pair."""
    truth = truth or gen_trajectory(spec)
    pairs = {(j, k): _sample_pair(truth, j, k, spec) for j, k in spec.pairs()}
    loops = {(j, k): _sample_pair(truth, j, k, spec) for j, k in spec.loop_pairs}
    logger.debug(f"Generated {len(pairs)} pairs and {len(loops)} loop candidates")
    return SynthDataset(spec, truth, pairs, loops)


# -- rotation graphs ----------------------------------------------------------


@dataclass
class SynthGraph:
    graph: ViewGraph
    truth: GroundTruth
    outlier_edges: list[tuple[int, int]]

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / GRAPH_FILE).open("w") as fh:
            self.graph.dump(fh)
        write_ground_truth(out / TRUTH_FILE, self.truth)
        (out / OUTLIER_EDGES_FILE).write_text(
            "".join(f"{j} {k}\n" for j, k in self.outlier_edges)
        )
        logger.info(f"Wrote synthetic rotation graph to {out}")
        return out


def gen_rotgraph(spec: SynthSpec) -> SynthGraph:
    """View-graph with window connectivity, loop pairs and random chords.

    Edge measurements are the true relative rotations perturbed by isotropic
    tangent noise of std ``rel_rot_noise``; a ``outlier_frac`` share of edges
    is replaced by uniformly random rotations. Nodes are initialised by
    chaining the measured consecutive edges.
    """
    truth = gen_trajectory(spec)
    n = spec.n_frames
    rng = derive_rng(spec.seed, n)

    keys = set(spec.pairs()) | set(spec.loop_pairs)
    n_chords = int(round(spec.chord_frac * n))
    while n_chords > 0 and n > 2:
        j, k = sorted(int(v) for v in rng.choice(n, size=2, replace=False))
        if k - j > 1 and (j, k) not in keys:
            keys.add((j, k))
            n_chords -= 1
    edges = sorted(keys)

    n_out = int(round(spec.outlier_frac * len(edges)))
    outliers = sorted(edges[i] for i in rng.permutation(len(edges))[:n_out]) if n_out else []
    outlier_set = set(outliers)

    measured: dict[tuple[int, int], Rot3] = {}
    for j, k in edges:
        edge_rng = derive_rng(spec.seed, j, k)
        if (j, k) in outlier_set:
            measured[(j, k)] = Rot3.random(edge_rng)
        else:
            true_rel = truth.rotations[j].relative(truth.rotations[k])
            measured[(j, k)] = true_rel @ exp(edge_rng.normal(0.0, spec.rel_rot_noise, size=3))

    graph = ViewGraph()
    graph.add_node(0)
    for k in range(1, n):
        prev = measured.get((k - 1, k))
        init = graph.nodes[k - 1] @ prev if prev is not None else truth.rotations[k]
        graph.add_node(k, init)
    loop_keys = set(spec.loop_pairs)
    for j, k in edges:
        graph.add_edge(j, k, measured[(j, k)], spec.n_points, is_loop=(j, k) in loop_keys)

    logger.debug(f"Generated rotation graph: {n} nodes, {len(edges)} edges, {n_out} outliers")
    return SynthGraph(graph, truth, outliers)
