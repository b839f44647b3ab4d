"""
Reading and writing the on-disk dataset layout.

A dataset directory holds ``matches.txt`` (``PAIR j k`` pixel blocks or
``BPAIR j k`` bearing blocks), an optional ``intrinsics.txt`` (required for
pixel blocks, forbidden for bearing blocks) and an optional ``loops.txt``
(``LOOP j k`` blocks with the same row format). All files are whitespace
separated text with ``#`` comments.
"""

import json
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .bearing import Intrinsics, pixel_to_bearing
from .exceptions import DatasetError, InvalidArgumentError
from .logging import get_logger
from .loopclose import LoopCandidate
from .pipeline import STAGES, FrameRecord, StepReport
from .relrot import CorrSet
from .so3 import Rot3

logger = get_logger()

MATCHES_FILE = "matches.txt"
LOOPS_FILE = "loops.txt"
INTRINSICS_FILE = "intrinsics.txt"

PIXEL_COLUMNS = 4
BEARING_COLUMNS = 6

BlockKey = tuple[int, int]


@dataclass(frozen=True)
class Dataset:
    path: Path
    records: list[FrameRecord]
    intrinsics: Intrinsics | None
    n_frames: int

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class _Block:
    tag: str
    key: BlockKey
    line: int
    rows: list[list[float]]


def _tokens(raw: str) -> list[str]:
    return raw.split("#", 1)[0].split()


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetError(f"Cannot read file: {e}", path) from e


class DatasetReader:
    """Loader for a dataset directory."""

    def __init__(self, dataset_dir: str | Path):
        self.dataset_dir = Path(dataset_dir)
        self._pixel_loops = False
        self._validate_path()

    def _validate_path(self):
        """Validate that the dataset directory exists and holds a matches file."""
        if not self.dataset_dir.exists():
            raise DatasetError("Dataset directory not found", self.dataset_dir)
        if not self.dataset_dir.is_dir():
            raise DatasetError("Dataset path must be a directory", self.dataset_dir)
        if not (self.dataset_dir / MATCHES_FILE).exists():
            raise DatasetError(f"Missing {MATCHES_FILE}", self.dataset_dir)

    def read_intrinsics(self) -> Intrinsics | None:
        path = self.dataset_dir / INTRINSICS_FILE
        if not path.exists():
            return None
        for lineno, raw in enumerate(_read_lines(path), start=1):
            tokens = _tokens(raw)
            if not tokens:
                continue
            if len(tokens) != 4:
                raise DatasetError(f"Expected 'fx fy cx cy', got {len(tokens)} values", path, lineno)
            try:
                return Intrinsics(*(float(t) for t in tokens))
            except (ValueError, InvalidArgumentError) as e:
                raise DatasetError(str(e), path, lineno) from e
        raise DatasetError("No intrinsics found", path)

    def _read_blocks(self, path: Path, tags: tuple[str, ...]) -> list[_Block]:
        blocks: list[_Block] = []
        seen: set[tuple[str, BlockKey]] = set()
        for lineno, raw in enumerate(_read_lines(path), start=1):
            tokens = _tokens(raw)
            if not tokens:
                continue
            if tokens[0].isalpha():
                if tokens[0] not in tags or len(tokens) != 3:
                    raise DatasetError(f"Expected one of {tags} followed by 'j k'", path, lineno)
                try:
                    j, k = int(tokens[1]), int(tokens[2])
                except ValueError as e:
                    raise DatasetError(f"Frame ids must be integers: {e}", path, lineno) from e
                if j < 0 or j >= k:
                    raise DatasetError(f"Block ({j}, {k}) must satisfy 0 <= j < k", path, lineno)
                if (tokens[0], (j, k)) in seen:
                    raise DatasetError(f"Duplicate block {tokens[0]} {j} {k}", path, lineno)
                seen.add((tokens[0], (j, k)))
                blocks.append(_Block(tokens[0], (j, k), lineno, []))
                continue

            if not blocks:
                raise DatasetError("Correspondence row before any block header", path, lineno)
            block = blocks[-1]
            width = self._row_width(block.tag)
            if len(tokens) != width:
                raise DatasetError(f"Expected {width} values per row, got {len(tokens)}", path, lineno)
            try:
                row = [float(t) for t in tokens]
            except ValueError as e:
                raise DatasetError(f"Non-numeric value: {e}", path, lineno) from e
            if not np.all(np.isfinite(row)):
                raise DatasetError("Non-finite value", path, lineno)
            if width == BEARING_COLUMNS and (row[2] <= 0.0 or row[5] <= 0.0):
                raise DatasetError("Bearings must point in front of the camera (z > 0)", path, lineno)
            block.rows.append(row)
        return blocks

    def _row_width(self, tag: str) -> int:
        if tag == "PAIR":
            return PIXEL_COLUMNS
        if tag == "BPAIR":
            return BEARING_COLUMNS
        return PIXEL_COLUMNS if self._pixel_loops else BEARING_COLUMNS

    def _to_corr(self, block: _Block, intrinsics: Intrinsics | None) -> CorrSet:
        width = self._row_width(block.tag)
        rows = np.asarray(block.rows, dtype=np.float64).reshape(-1, width)
        if width == PIXEL_COLUMNS:
            f = pixel_to_bearing(rows[:, :2], intrinsics) if len(rows) else np.empty((0, 3))
            fp = pixel_to_bearing(rows[:, 2:], intrinsics) if len(rows) else np.empty((0, 3))
        else:
            f = rows[:, :3] / np.linalg.norm(rows[:, :3], axis=1, keepdims=True)
            fp = rows[:, 3:] / np.linalg.norm(rows[:, 3:], axis=1, keepdims=True)
        return CorrSet(f, fp)

    def load(self) -> Dataset:
        """Parse every file into per-frame records ordered by frame id."""
        intrinsics = self.read_intrinsics()
        self._pixel_loops = intrinsics is not None
        matches_path = self.dataset_dir / MATCHES_FILE
        blocks = self._read_blocks(matches_path, ("PAIR", "BPAIR"))

        tags = {b.tag for b in blocks}
        if len(tags) > 1:
            first = next(b for b in blocks if b.tag != blocks[0].tag)
            raise DatasetError("PAIR and BPAIR blocks cannot be mixed", matches_path, first.line)
        if "PAIR" in tags and intrinsics is None:
            raise DatasetError(f"PAIR blocks need {INTRINSICS_FILE}", matches_path, blocks[0].line)
        if "BPAIR" in tags and intrinsics is not None:
            raise DatasetError(
                f"BPAIR blocks carry bearings; remove {INTRINSICS_FILE}", matches_path, blocks[0].line
            )

        loops_path = self.dataset_dir / LOOPS_FILE
        loop_blocks = self._read_blocks(loops_path, ("LOOP",)) if loops_path.exists() else []

        pairs: dict[int, dict[int, CorrSet]] = {}
        for block in blocks:
            j, k = block.key
            pairs.setdefault(k, {})[j] = self._to_corr(block, intrinsics)
        loops: dict[int, list[LoopCandidate]] = {}
        for block in loop_blocks:
            j, k = block.key
            corr = self._to_corr(block, intrinsics)
            loops.setdefault(k, []).append(LoopCandidate(j, k, corr))

        ids = [k for b in blocks + loop_blocks for k in b.key]
        n_frames = max(ids) + 1 if ids else 0
        records = [
            FrameRecord(frame_id=k, pairs=pairs.get(k, {}), loops=tuple(loops.get(k, ())))
            for k in range(n_frames)
        ]
        logger.info(
            f"Loaded dataset {self.dataset_dir}: {n_frames} frames, {len(blocks)} pairs, "
            f"{len(loop_blocks)} loop candidates"
        )
        return Dataset(self.dataset_dir, records, intrinsics, n_frames)


def load_dataset(dataset_dir: str | Path) -> Dataset:
    return DatasetReader(dataset_dir).load()


def _format_rows(rows: NDArray[np.float64]) -> str:
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in rows)


def write_correspondences(
    path: str | Path,
    blocks: Iterable[tuple[BlockKey, NDArray[np.float64]]],
    tag: str,
) -> None:
    """Write ``tag j k`` blocks; each block's rows are pixel or bearing pairs."""
    with Path(path).open("w") as fh:
        for (j, k), rows in blocks:
            fh.write(f"{tag} {j} {k}\n")
            fh.write(_format_rows(rows))


def write_intrinsics(path: str | Path, k: Intrinsics) -> None:
    Path(path).write_text(f"{k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g}\n")


def write_trajectory(path: str | Path, trajectory: Iterable[tuple[int, Rot3]]) -> None:
    """Rows ``frame_id qw qx qy qz``."""
    with Path(path).open("w") as fh:
        for frame_id, R in trajectory:
            fh.write(f"{frame_id} {R.format()}\n")


def write_timing(
    path: str | Path, reports: Sequence[StepReport], wall_us: Mapping[str, int] | None = None
) -> None:
    """Per-frame stage durations in microseconds, wall totals as a trailing comment."""
    with Path(path).open("w") as fh:
        fh.write("frame_id," + ",".join(f"{s}_us" for s in STAGES) + "\n")
        for report in reports:
            fh.write(f"{report.frame_id}," + ",".join(str(report.timings_us[s]) for s in STAGES) + "\n")
        if wall_us:
            fh.write("# total," + ",".join(f"{k}={v}" for k, v in wall_us.items()) + "\n")


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return '""'
    return json.dumps(str(value))


def write_manifest(path: str | Path, entries: Mapping[str, Any]) -> None:
    """Write a flat dotted-key TOML file atomically (temp file then rename)."""
    path = Path(path)
    text = "".join(f"{key} = {_toml_value(value)}\n" for key, value in entries.items())
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
