"""
Rotvo - Rotation-only visual odometry

Command line entry point: run the odometry on a dataset, evaluate trajectories,
generate synthetic data and compare orientation-update modes.
"""

import csv
import dataclasses
import math
import sys
from pathlib import Path

import typer

from . import __version__
from .core.config import RotvoConfig
from .core.dataset import load_dataset, write_manifest, write_timing, write_trajectory
from .core.exceptions import DatasetError, EmptyPairSetError, InvalidArgumentError, RotvoError
from .core.logging import get_logger, setup as setup_logging
from .core.metrics import (
    GroundTruth,
    avg_rot_err,
    euler_table,
    read_ground_truth,
    rmse_curve,
    rpe1,
    rpen,
)
from .core.pipeline import SequenceResult, run_sequence
from .core.strategy_registry import strategy_registry
from .core.synth import SynthSpec, gen_correspondences, gen_rotgraph

logger = get_logger()

app = typer.Typer(help="Rotvo - rotation-only visual odometry", no_args_is_help=True)

PRESETS = {
    "drive-loop": "drive_loop",
    "pure-rotation": "pure_rotation",
    "rotgraph": "drive_loop",
}


def _fail(e: Exception) -> typer.Exit:
    """Log a failure and map it to an exit code (2 for input errors)."""
    code = 2 if isinstance(e, (DatasetError, InvalidArgumentError)) else 1
    logger.error(f"{type(e).__name__}: {e}")
    typer.echo(f"✗ Error: {e}", err=True)
    return typer.Exit(code)


def _configure(config_file: Path | None, **overrides) -> RotvoConfig:
    """Resolve defaults < config file < flags and set up logging."""
    cfg = RotvoConfig()
    if config_file is not None:
        cfg.update_from_file(config_file)
    cfg.update_from_cli_args(**overrides)
    setup_logging(level=cfg.log_level, file=cfg.log_file)
    return cfg


def _metric_rows(gt: GroundTruth, est: GroundTruth) -> list[tuple[str, float]]:
    rows = [("rpe1", math.degrees(rpe1(gt, est))), ("rpen", math.degrees(rpen(gt, est)))]
    if gt.positions is None:
        return rows
    try:
        err = avg_rot_err(gt, est)
    except EmptyPairSetError as e:
        logger.warning(f"r_err not reported: {e}")
        return rows
    rows.append(("r_err", math.degrees(err.mean)))
    rows.append(("r_err_per_100m", err.deg_per_100m))
    rows.extend((f"r_err_{int(d)}m", math.degrees(v)) for d, v in err.per_length.items())
    return rows


def _write_csv(path: Path | None, header: list[str], rows) -> None:
    if path is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


@app.command()
def run(
    dataset_dir: Path = typer.Argument(..., help="Dataset directory (matches.txt, ...)"),
    output_dir: Path = typer.Option(Path("out"), "--output-dir", "-o", help="Output directory"),
    config_file: Path = typer.Option(None, "--config", "-c", help="TOML config or run manifest"),
    f_window: int = typer.Option(None, "--f-window", help="Frames matched against (default 4)"),
    r_window: int = typer.Option(None, "--r-window", help="Orientations optimised (default 10)"),
    theta_matches: int = typer.Option(
        None, "--theta-matches", help="Inlier count an edge must exceed (default 100)"
    ),
    mode: str = typer.Option(
        None, "--mode", help="incremental | chaining | global_each_frame | single_anchor"
    ),
    seed: int = typer.Option(None, "--seed", help="Seed for every random stream"),
    loops: bool = typer.Option(None, "--loops/--no-loops", help="Validate loop candidates"),
    workers: int = typer.Option(None, "--workers", help="Threads for per-pair estimation"),
    strategy_file: Path = typer.Option(
        None, "--strategy-file", help="Python file registering extra modes"
    ),
    dump_graph: bool = typer.Option(False, "--dump-graph", help="Also write graph.txt"),
    log_level: str = typer.Option(None, "--log-level", help="Logging level"),
    log_file: str = typer.Option(None, "--log-file", help="Rotating log file"),
):
    """Run the odometry and write trajectory.txt, timing.csv and manifest.toml."""
    try:
        if strategy_file is not None:
            strategy_registry.load_from_file(strategy_file)
        cfg = _configure(
            config_file,
            f_window=f_window,
            r_window=r_window,
            theta_matches=theta_matches,
            mode=mode,
            seed=seed,
            loops=loops,
            workers=workers,
            log_level=log_level,
            log_file=log_file,
        )
        dataset = load_dataset(dataset_dir)
        result = run_sequence(dataset, cfg.pipeline)
        output_dir.mkdir(parents=True, exist_ok=True)
        trajectory_path = output_dir / "trajectory.txt"
        timing_path = output_dir / "timing.csv"
        write_trajectory(trajectory_path, result.trajectory)
        write_timing(timing_path, result.reports, result.wall_us)
        if dump_graph:
            with (output_dir / "graph.txt").open("w") as fh:
                result.graph.dump(fh)

        manifest = {
            "package_version": __version__,
            "command": "run",
            "seed": cfg.pipeline.seed,
            "inputs.dataset": str(dataset_dir),
            "outputs.trajectory": trajectory_path.name,
            "outputs.timing": timing_path.name,
            "frames.total": len(dataset),
            "frames.estimated": len(result.trajectory),
            "frames.skipped": len(result.skipped),
        }
        manifest.update({f"config.{k}": v for k, v in cfg.to_flat_dict().items()})
        write_manifest(output_dir / "manifest.toml", manifest)
    except (RotvoError, FileNotFoundError) as e:
        raise _fail(e)

    typer.echo(
        f"✓ {len(result.trajectory)} frames estimated, {len(result.skipped)} skipped "
        f"-> {output_dir}",
        err=True,
    )


@app.command(name="eval")
def evaluate(
    trajectory: Path = typer.Argument(..., help="Estimated trajectory (frame_id qw qx qy qz)"),
    ground_truth: Path = typer.Argument(..., help="Ground truth (frame_id q... [t...] or KITTI)"),
    output: Path = typer.Option(None, "--output", "-o", help="Metrics CSV (default stdout)"),
    delta: Path = typer.Option(None, "--delta", help="Write the RMSE-per-gap curve as CSV"),
    euler: Path = typer.Option(None, "--euler", help="Write yaw/pitch/roll per frame as CSV"),
    log_level: str = typer.Option("INFO", "--log-level", help="Logging level"),
):
    """Compare a trajectory to ground truth; values are reported in degrees."""
    setup_logging(level=log_level)
    try:
        est = read_ground_truth(trajectory)
        gt = read_ground_truth(ground_truth)
        _write_csv(output, ["metric", "value_deg"], _metric_rows(gt, est))
        if delta is not None:
            curve = rmse_curve(gt, est)
            _write_csv(
                delta,
                ["delta", "rmse_deg"],
                [(i + 1, math.degrees(v)) for i, v in enumerate(curve)],
            )
        if euler is not None:
            _write_csv(
                euler,
                [
                    "frame_id",
                    "yaw_deg",
                    "pitch_deg",
                    "roll_deg",
                    "gt_yaw_deg",
                    "gt_pitch_deg",
                    "gt_roll_deg",
                ],
                [tuple("" if v is None else v for v in row) for row in euler_table(est, gt)],
            )
    except RotvoError as e:
        raise _fail(e)


@app.command()
def synth(
    preset: str = typer.Argument(..., help="drive-loop | pure-rotation | rotgraph"),
    output_dir: Path = typer.Argument(..., help="Directory to create"),
    frames: int = typer.Option(200, "--frames", "-n", help="Number of frames"),
    points: int = typer.Option(200, "--points", help="Correspondences per pair"),
    noise_deg: float = typer.Option(0.0, "--noise-deg", help="Bearing noise std (degrees)"),
    outlier_frac: float = typer.Option(0.0, "--outlier-frac", help="Outlier fraction"),
    rel_noise_deg: float = typer.Option(
        0.0, "--rel-noise-deg", help="Edge noise std for rotgraph (degrees)"
    ),
    loop: list[str] = typer.Option(None, "--loop", help="Loop pair 'j:k' (repeatable)"),
    f_window: int = typer.Option(4, "--f-window", help="Pairs per frame"),
    chord_frac: float = typer.Option(0.0, "--chord-frac", help="Random chords for rotgraph"),
    pixels: bool = typer.Option(False, "--pixels", help="Write pixel PAIR blocks"),
    seed: int = typer.Option(0, "--seed", help="Generator seed"),
    log_level: str = typer.Option("INFO", "--log-level", help="Logging level"),
):
    """Generate a synthetic dataset from a preset."""
    setup_logging(level=log_level)
    try:
        if preset not in PRESETS:
            raise InvalidArgumentError(f"Unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        loop_pairs = []
        for item in loop or []:
            j, sep, k = item.partition(":")
            if not sep or not j.strip().isdigit() or not k.strip().isdigit():
                raise InvalidArgumentError(f"--loop expects 'j:k', got {item!r}")
            loop_pairs.append((int(j), int(k)))

        spec = SynthSpec(
            n_frames=frames,
            motion=PRESETS[preset],
            n_points=points,
            bearing_noise=math.radians(noise_deg),
            outlier_frac=outlier_frac,
            rel_rot_noise=math.radians(rel_noise_deg),
            loop_pairs=loop_pairs,
            seed=seed,
            f_window=f_window,
            chord_frac=chord_frac,
            pixels=pixels,
        )
        if preset == "rotgraph":
            generated = gen_rotgraph(spec)
            generated.write(output_dir)
            summary = (
                f"{len(generated.graph)} nodes, {len(generated.graph.edges)} edges, "
                f"{len(generated.outlier_edges)} outlier edges"
            )
        else:
            dataset = gen_correspondences(spec)
            dataset.write(output_dir)
            summary = (
                f"{spec.n_frames} frames, {len(dataset.pairs)} pairs, "
                f"{len(dataset.loops)} loop candidates"
            )
    except RotvoError as e:
        raise _fail(e)

    typer.echo(f"✓ {preset}: {summary} -> {output_dir}")


@app.command()
def ablate(
    dataset_dir: Path = typer.Argument(..., help="Dataset directory"),
    ground_truth: Path = typer.Option(
        None, "--gt", help="Ground truth file (default: DATASET_DIR/truth.txt)"
    ),
    output_dir: Path = typer.Option(Path("ablation"), "--output-dir", "-o"),
    config_file: Path = typer.Option(None, "--config", "-c", help="TOML config file"),
    global_each_frame: bool = typer.Option(
        False, "--global-each-frame", help="Also run full averaging at every frame"
    ),
    single_anchor: bool = typer.Option(
        False, "--single-anchor", help="Also run single-anchor windowed averaging"
    ),
    loops: bool = typer.Option(False, "--loops/--no-loops", help="Validate loop candidates"),
    seed: int = typer.Option(None, "--seed", help="Seed for every random stream"),
    log_level: str = typer.Option(None, "--log-level", help="Logging level"),
):
    """Run several modes on one dataset; write ablation.csv and ablation_timing.csv."""
    try:
        cfg = _configure(config_file, seed=seed, loops=loops, log_level=log_level)
        modes = ["incremental", "chaining"]
        if global_each_frame:
            modes.append("global_each_frame")
        if single_anchor:
            modes.append("single_anchor")

        dataset = load_dataset(dataset_dir)
        gt = read_ground_truth(ground_truth or Path(dataset_dir) / "truth.txt")

        results: dict[str, SequenceResult] = {}
        for mode in modes:
            results[mode] = run_sequence(dataset, dataclasses.replace(cfg.pipeline, mode=mode))

        output_dir.mkdir(parents=True, exist_ok=True)
        summary = []
        for mode, result in results.items():
            est = GroundTruth.from_pairs(result.trajectory)
            summary.append(
                (
                    mode,
                    math.degrees(rpe1(gt, est)),
                    math.degrees(rpen(gt, est)),
                    len(result.skipped),
                    result.wall_us["total"] / 1000.0,
                )
            )
        _write_csv(
            output_dir / "ablation.csv",
            ["mode", "rpe1_deg", "rpen_deg", "skipped", "total_ms"],
            summary,
        )

        frame_ids = [r.frame_id for r in results[modes[0]].reports]
        per_mode = {
            mode: {r.frame_id: r.timings_us["rotavg"] for r in result.reports}
            for mode, result in results.items()
        }
        _write_csv(
            output_dir / "ablation_timing.csv",
            ["frame_id"] + [f"{mode}_rotavg_us" for mode in modes],
            [[fid] + [per_mode[mode].get(fid, 0) for mode in modes] for fid in frame_ids],
        )
    except RotvoError as e:
        raise _fail(e)

    for mode, rpe1_deg, rpen_deg, skipped, total_ms in summary:
        typer.echo(
            f"✓ {mode}: RPE1 {rpe1_deg:.4f} deg, RPEn {rpen_deg:.4f} deg, "
            f"{skipped} skipped, {total_ms:.1f} ms",
            err=True,
        )


@app.command()
def version():
    """Show version and exit."""
    typer.echo(f"Rotvo version {__version__}")


def cli():
    """Entry point for console script."""
    app()


if __name__ == "__main__":
    app()
