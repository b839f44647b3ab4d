"""
Monte-Carlo calibration runs behind the frozen test thresholds.

Each command prints a short summary to stderr and can write the raw per-seed
numbers as CSV. Run from the repository root, e.g.::

    uv run scripts/calibrate.py ransac --seeds 100 -o ransac.csv
"""

import csv
import math
import time
from pathlib import Path

import numpy as np
import typer

from rotvo.core.config import PipelineConfig, RelRotConfig
from rotvo.core.logging import get_logger, setup as setup_logging
from rotvo.core.metrics import GroundTruth, rpe1, rpen
from rotvo.core.pipeline import run_sequence
from rotvo.core.relrot import ransac_relrot
from rotvo.core.so3 import geodesic_angle
from rotvo.core.synth import SynthSpec, gen_correspondences

logger = get_logger()

app = typer.Typer(help="Calibration runs for rotvo", no_args_is_help=True)


def _write_rows(path: Path | None, header: list[str], rows: list) -> None:
    if path is None:
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")


@app.callback()
def main(log_level: str = typer.Option("WARNING", "--log-level", help="Logging level")):
    setup_logging(level=log_level)


@app.command()
def ransac(
    seeds: int = typer.Option(100, "--seeds"),
    points: int = typer.Option(200, "--points"),
    outlier_frac: float = typer.Option(0.3, "--outlier-frac"),
    noise_deg: float = typer.Option(0.1, "--noise-deg"),
    output: Path = typer.Option(None, "--output", "-o"),
):
    """Rotation error, inlier precision and recall of single-pair RANSAC."""
    rows = []
    for seed in range(seeds):
        spec = SynthSpec(
            n_frames=60,
            f_window=1,
            n_points=points,
            bearing_noise=math.radians(noise_deg),
            outlier_frac=outlier_frac,
            seed=seed,
        )
        data = gen_correspondences(spec)
        j = seed % 59
        pair = data.pairs[(j, j + 1)]
        result = ransac_relrot(pair.corr, cfg=RelRotConfig(seed=seed))

        found = np.zeros(len(pair.corr), dtype=bool)
        found[result.inliers] = True
        hits = int((found & pair.inliers).sum())
        truth = data.truth.rotations[j].relative(data.truth.rotations[j + 1])
        rows.append(
            (
                seed,
                math.degrees(geodesic_angle(result.R_jk, truth)),
                hits / max(int(found.sum()), 1),
                hits / int(pair.inliers.sum()),
                result.hypotheses,
            )
        )

    errors, precision, recall = (np.array([r[i] for r in rows]) for i in (1, 2, 3))
    typer.echo(
        f"median error {np.median(errors):.4f} deg (p90 {np.percentile(errors, 90):.4f}), "
        f"median precision {np.median(precision):.4f}, median recall {np.median(recall):.4f}",
        err=True,
    )
    _write_rows(output, ["seed", "error_deg", "precision", "recall", "hypotheses"], rows)


def _noisy_spec(frames: int, seed: int, loop: bool = False) -> SynthSpec:
    return SynthSpec(
        n_frames=frames,
        n_points=150,
        bearing_noise=math.radians(0.1),
        outlier_frac=0.1,
        loop_pairs=[(0, frames - 1)] if loop else [],
        seed=seed,
    )


def _estimate(result) -> GroundTruth:
    return GroundTruth.from_pairs(result.trajectory)


@app.command()
def ablation(
    seeds: int = typer.Option(50, "--seeds"),
    frames: int = typer.Option(500, "--frames"),
    output: Path = typer.Option(None, "--output", "-o"),
):
    """Incremental versus chaining RPE1 on noisy drive loops, loops disabled."""
    rows = []
    for seed in range(seeds):
        data = gen_correspondences(_noisy_spec(frames, seed))
        records = data.records()
        values = []
        for mode in ("incremental", "chaining"):
            result = run_sequence(records, PipelineConfig(mode=mode, loops=False, seed=seed))
            values.append(math.degrees(rpe1(data.truth, _estimate(result))))
        rows.append((seed, *values, values[0] / values[1]))
        logger.info(f"seed {seed}: incremental {values[0]:.4f} deg, chaining {values[1]:.4f} deg")

    wins = sum(r[1] < r[2] for r in rows)
    ratio = np.median([r[3] for r in rows])
    typer.echo(f"incremental wins {wins}/{len(rows)}, median RPE1 ratio {ratio:.3f}", err=True)
    _write_rows(output, ["seed", "incremental_rpe1_deg", "chaining_rpe1_deg", "ratio"], rows)


@app.command()
def loops(
    seeds: int = typer.Option(20, "--seeds"),
    frames: int = typer.Option(500, "--frames"),
    output: Path = typer.Option(None, "--output", "-o"),
):
    """RPEn with and without one loop pair closing the drive loop."""
    rows = []
    for seed in range(seeds):
        data = gen_correspondences(_noisy_spec(frames, seed, loop=True))
        records = data.records()
        values = []
        for enabled in (True, False):
            result = run_sequence(records, PipelineConfig(loops=enabled, seed=seed))
            values.append(math.degrees(rpen(data.truth, _estimate(result))))
        rows.append((seed, *values, values[0] / values[1]))

    ratio = np.median([r[3] for r in rows])
    typer.echo(f"median RPEn ratio (loops / no loops) {ratio:.3f}", err=True)
    _write_rows(output, ["seed", "loops_rpen_deg", "no_loops_rpen_deg", "ratio"], rows)


@app.command()
def runtime(
    frames: int = typer.Option(2000, "--frames"),
    seed: int = typer.Option(0, "--seed"),
    skip_global: bool = typer.Option(False, "--skip-global", help="Time the incremental mode only"),
    output: Path = typer.Option(None, "--output", "-o"),
):
    """Per-frame averaging time of the incremental and global-each-frame modes."""
    start = time.perf_counter()
    records = gen_correspondences(SynthSpec(n_frames=frames, n_points=120, seed=seed)).records()
    logger.info(f"Generated {frames} frames in {time.perf_counter() - start:.1f} s")

    modes = ["incremental"] if skip_global else ["incremental", "global_each_frame"]
    per_mode = {}
    for mode in modes:
        result = run_sequence(records, PipelineConfig(mode=mode, loops=False, seed=seed))
        per_mode[mode] = np.array([r.timings_us["rotavg"] for r in result.reports], dtype=float)

    inc = per_mode["incremental"][1:]
    slope = np.polyfit(np.arange(1, len(inc) + 1), inc, 1)[0]
    typer.echo(
        f"incremental: mean {inc.mean():.1f} us/frame, slope {100.0 * slope * 1000 / inc.mean():.2f}% "
        "of the mean per 1000 frames",
        err=True,
    )
    if "global_each_frame" in per_mode and frames >= 2000:
        glob = per_mode["global_each_frame"]
        # Median over a short neighbourhood smooths scheduler noise
        late, early = np.median(glob[-10:]), np.median(glob[195:205])
        typer.echo(f"global_each_frame: frame {frames} / frame 200 time ratio {late / early:.1f}", err=True)

    rows = [[i] + [int(per_mode[m][i]) for m in modes] for i in range(frames)]
    _write_rows(output, ["frame_id"] + [f"{m}_rotavg_us" for m in modes], rows)


if __name__ == "__main__":
    app()
