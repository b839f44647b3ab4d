"""
Rotation-error evaluation against ground-truth orientations.

All metrics compare relative orientations, so they are invariant to a global
rotation of either trajectory and need no alignment. Estimated and reference
series are inner-joined on frame id; gaps ``delta`` count index steps in the
joined sequence. Results are in radians.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .exceptions import DatasetError, EmptyPairSetError, InvalidArgumentError, UnsupportedMetricError
from .logging import get_logger
from .so3 import Rot3

logger = get_logger()

DEFAULT_DISTANCES: tuple[float, ...] = tuple(float(d) for d in range(100, 900, 100))


@dataclass(frozen=True)
class GroundTruth:
    """Orientations (and optional positions in meters) keyed by frame id, sorted."""

    frame_ids: tuple[int, ...]
    rotations: tuple[Rot3, ...]
    positions: NDArray[np.float64] | None = None

    def __post_init__(self):
        if len(self.frame_ids) != len(self.rotations):
            raise InvalidArgumentError("frame_ids and rotations differ in length")
        if self.positions is not None and len(self.positions) != len(self.frame_ids):
            raise InvalidArgumentError("positions and frame_ids differ in length")
        order = np.argsort(self.frame_ids, kind="stable")
        ids = tuple(int(self.frame_ids[i]) for i in order)
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("Duplicate frame ids")
        object.__setattr__(self, "frame_ids", ids)
        object.__setattr__(self, "rotations", tuple(self.rotations[i] for i in order))
        if self.positions is not None:
            object.__setattr__(
                self, "positions", np.asarray(self.positions, dtype=np.float64)[order]
            )

    @classmethod
    def from_pairs(
        cls, items: Iterable[tuple[int, Rot3]], positions: NDArray[np.float64] | None = None
    ) -> "GroundTruth":
        items = list(items)
        return cls(tuple(i for i, _ in items), tuple(R for _, R in items), positions)

    def __len__(self) -> int:
        return len(self.frame_ids)

    def items(self) -> list[tuple[int, Rot3]]:
        return list(zip(self.frame_ids, self.rotations))


@dataclass(frozen=True)
class AvgRotErr:
    mean: float  # radians
    per_meter: float  # radians per meter, averaged over pairs
    per_length: dict[float, float] = field(default_factory=dict)
    pairs: int = 0

    @property
    def deg_per_100m(self) -> float:
        return float(np.degrees(self.per_meter) * 100.0)


def _scipy(rotations: Sequence[Rot3]) -> Rotation:
    quats = np.array([[R.q[1], R.q[2], R.q[3], R.q[0]] for R in rotations]).reshape(-1, 4)
    return Rotation.from_quat(quats)


@dataclass(frozen=True)
class _Joined:
    frame_ids: tuple[int, ...]
    gt: Rotation
    est: Rotation


def _join(gt: GroundTruth, est: GroundTruth) -> _Joined:
    est_index = {frame_id: i for i, frame_id in enumerate(est.frame_ids)}
    gt_rows = [i for i, frame_id in enumerate(gt.frame_ids) if frame_id in est_index]
    ids = tuple(gt.frame_ids[i] for i in gt_rows)
    if len(ids) < 2:
        raise InvalidArgumentError(f"Need at least 2 common frames, got {len(ids)}")
    dropped = len(gt) + len(est) - 2 * len(ids)
    if dropped:
        logger.debug(f"Join on frame ids dropped {dropped} unmatched rows")
    return _Joined(
        frame_ids=ids,
        gt=_scipy([gt.rotations[i] for i in gt_rows]),
        est=_scipy([est.rotations[est_index[frame_id]] for frame_id in ids]),
    )


def _residuals(joined: _Joined, delta: int) -> NDArray[np.float64]:
    a = slice(0, len(joined.frame_ids) - delta)
    b = slice(delta, None)
    rel_gt = joined.gt[a].inv() * joined.gt[b]
    rel_est = joined.est[a].inv() * joined.est[b]
    return (rel_gt.inv() * rel_est).magnitude()


def _pair_residuals(joined: _Joined, i: NDArray[np.intp], j: NDArray[np.intp]) -> NDArray[np.float64]:
    rel_gt = joined.gt[i].inv() * joined.gt[j]
    rel_est = joined.est[i].inv() * joined.est[j]
    return (rel_gt.inv() * rel_est).magnitude()


def rpe_residual(gt: GroundTruth, est: GroundTruth, i: int, delta: int) -> float:
    """Relative orientation error between frame ``i`` and the frame ``delta``
    steps later in the joined sequence."""
    joined = _join(gt, est)
    if i not in joined.frame_ids:
        raise InvalidArgumentError(f"Frame {i} is not present in both trajectories")
    start = joined.frame_ids.index(i)
    if delta < 1 or start + delta >= len(joined.frame_ids):
        raise InvalidArgumentError(f"No frame {delta} steps after frame {i}")
    return float(
        _pair_residuals(joined, np.array([start]), np.array([start + delta]))[0]
    )


def rmse_curve(gt: GroundTruth, est: GroundTruth) -> NDArray[np.float64]:
    """RMSE of the relative residuals for every gap 1..n-1 (index 0 is gap 1)."""
    joined = _join(gt, est)
    n = len(joined.frame_ids)
    return np.array(
        [np.sqrt(np.mean(np.square(_residuals(joined, delta)))) for delta in range(1, n)]
    )


def rpe1(gt: GroundTruth, est: GroundTruth) -> float:
    joined = _join(gt, est)
    return float(np.sqrt(np.mean(np.square(_residuals(joined, 1)))))


def rpen(gt: GroundTruth, est: GroundTruth) -> float:
    """Average of RMSE over all gaps, divided by the number of frames.

    The gap equal to the frame count has no pairs and is skipped; the divisor
    stays the frame count.
    """
    curve = rmse_curve(gt, est)
    return float(curve.sum() / (len(curve) + 1))


def avg_rot_err(
    gt: GroundTruth, est: GroundTruth, distances: Sequence[float] = DEFAULT_DISTANCES
) -> AvgRotErr:
    """Mean relative orientation error over pairs separated by given path lengths.

    For every start frame and distance, the partner is the first later frame
    whose cumulative ground-truth path length from the start exceeds the
    distance.
    """
    if gt.positions is None:
        raise UnsupportedMetricError("avg_rot_err needs ground-truth positions")
    joined = _join(gt, est)

    # Path length along the full ground truth, including frames missing from est
    steps = np.linalg.norm(np.diff(gt.positions, axis=0), axis=1)
    gt_dist = np.concatenate([[0.0], np.cumsum(steps)])
    row = {frame_id: i for i, frame_id in enumerate(gt.frame_ids)}
    dist = gt_dist[[row[frame_id] for frame_id in joined.frame_ids]]
    n = len(dist)

    starts, ends, lengths = [], [], []
    for d in distances:
        partners = np.searchsorted(dist, dist + d, side="right")
        valid = np.flatnonzero(partners < n)
        starts.append(valid)
        ends.append(partners[valid])
        lengths.append(np.full(len(valid), float(d)))
    i = np.concatenate(starts)
    j = np.concatenate(ends)
    if len(i) == 0:
        raise EmptyPairSetError(
            f"No frame pairs separated by {min(distances)} m or more (path length {dist[-1]:.1f} m)"
        )
    length = np.concatenate(lengths)

    err = _pair_residuals(joined, i, j)
    per_length = {
        float(d): float(err[length == d].mean()) for d in distances if np.any(length == d)
    }
    return AvgRotErr(
        mean=float(err.mean()),
        per_meter=float(np.mean(err / length)),
        per_length=per_length,
        pairs=len(err),
    )


def euler_table(
    est: GroundTruth, gt: GroundTruth | None = None
) -> list[tuple[int, float, float, float, float | None, float | None, float | None]]:
    """Yaw (about y), pitch (about x) and roll (about z) in degrees per frame.

    Rows carry the reference angles too when ``gt`` is given (joined on id).
    """
    if len(est) == 0:
        return []
    angles = _scipy(est.rotations).as_euler("YXZ", degrees=True).reshape(-1, 3)
    ref: dict[int, NDArray[np.float64]] = {}
    if gt is not None and len(gt):
        gt_angles = _scipy(gt.rotations).as_euler("YXZ", degrees=True).reshape(-1, 3)
        ref = dict(zip(gt.frame_ids, gt_angles))
    rows = []
    for frame_id, (yaw, pitch, roll) in zip(est.frame_ids, angles):
        g = ref.get(frame_id)
        rows.append(
            (frame_id, float(yaw), float(pitch), float(roll))
            + ((float(g[0]), float(g[1]), float(g[2])) if g is not None else (None, None, None))
        )
    return rows


def read_ground_truth(path: str | Path) -> GroundTruth:
    """Read ``frame_id qw qx qy qz [tx ty tz]`` rows or KITTI 3x4 pose rows.

    The format is decided by the first data row; in KITTI files the row index
    is the frame id.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"Cannot read ground truth: {e}", path) from e

    ids: list[int] = []
    rotations: list[Rot3] = []
    positions: list[list[float]] = []
    kitti: bool | None = None
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if kitti is None:
            kitti = len(tokens) == 12
        try:
            if kitti:
                if len(tokens) != 12:
                    raise DatasetError(f"Expected 12 values, got {len(tokens)}", path, lineno)
                pose = np.array([float(t) for t in tokens]).reshape(3, 4)
                ids.append(len(ids))
                rotations.append(Rot3.from_matrix(pose[:, :3]))
                positions.append(pose[:, 3].tolist())
            else:
                if len(tokens) not in (5, 8):
                    raise DatasetError(
                        f"Expected 'frame_id qw qx qy qz [tx ty tz]', got {len(tokens)} values",
                        path,
                        lineno,
                    )
                ids.append(int(tokens[0]))
                rotations.append(Rot3.parse(tokens[1:5]))
                if len(tokens) == 8:
                    positions.append([float(t) for t in tokens[5:8]])
        except (ValueError, InvalidArgumentError) as e:
            raise DatasetError(str(e), path, lineno) from e

    if positions and len(positions) != len(ids):
        raise DatasetError("Positions must be given on every row or on none", path)
    try:
        return GroundTruth(tuple(ids), tuple(rotations), np.array(positions) if positions else None)
    except InvalidArgumentError as e:
        raise DatasetError(str(e), path) from e


def write_ground_truth(path: str | Path, gt: GroundTruth) -> None:
    with Path(path).open("w") as fh:
        for row, (frame_id, R) in enumerate(gt.items()):
            line = f"{frame_id} {R.format()}"
            if gt.positions is not None:
                line += " " + " ".join(f"{v:.17g}" for v in gt.positions[row])
            fh.write(line + "\n")
