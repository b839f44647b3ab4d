"""
Configuration management for rotvo.

This module provides the solver and pipeline settings as dataclasses together
with the application-level configuration used by the command line. Values are
resolved as defaults < TOML config file < command line flags.
"""

import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any

from .logging import get_logger
from .exceptions import InvalidArgumentError

logger = get_logger()

IRLS_LOSSES = ("huber", "geman_mcclure")
INLIER_RESIDUALS = ("epipolar", "plane_angle")


@dataclass
class RelRotConfig:
    """Settings for the eigenvalue-based relative rotation solver and its RANSAC."""

    min_sample: int = 5
    inlier_thresh: float = math.radians(0.5)  # radians
    max_iters: int = 50
    step_tol: float = 1e-8
    obj_tol: float = 1e-12
    confidence: float = 0.99
    max_ransac_iters: int = 1000
    fd_step: float = 1e-6
    inlier_residual: str = "epipolar"
    seed: int = 0

    def __post_init__(self):
        if self.min_sample < 5:
            raise InvalidArgumentError(
                f"min_sample must be at least 5, got {self.min_sample}"
            )
        if not 0.0 < self.inlier_thresh < math.pi / 2:
            raise InvalidArgumentError(
                f"inlier_thresh must lie in (0, pi/2) radians, got {self.inlier_thresh}"
            )
        if self.max_iters < 1 or self.max_ransac_iters < 1:
            raise InvalidArgumentError("iteration caps must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidArgumentError(
                f"confidence must lie in (0, 1), got {self.confidence}"
            )
        if self.fd_step <= 0.0:
            raise InvalidArgumentError(f"fd_step must be positive, got {self.fd_step}")
        if self.inlier_residual not in INLIER_RESIDUALS:
            raise InvalidArgumentError(
                f"inlier_residual must be one of {INLIER_RESIDUALS}, got {self.inlier_residual!r}"
            )


@dataclass
class IrlsConfig:
    """Settings for L1-IRLS rotation averaging (global and incremental)."""

    loss: str = "huber"
    loss_scale: float = math.radians(1.0)  # delta, radians
    l1_iters: int = 5
    irls_iters: int = 20
    # Whole-graph solves finish with a redescending phase; 0 disables it
    refine_loss: str = "geman_mcclure"
    refine_iters: int = 20
    step_tol: float = 1e-8  # radians
    weight_floor: float = 1e-3
    max_halvings: int = 8

    def __post_init__(self):
        if self.loss not in IRLS_LOSSES:
            raise InvalidArgumentError(
                f"loss must be one of {IRLS_LOSSES}, got {self.loss!r}"
            )
        if self.loss_scale <= 0.0:
            raise InvalidArgumentError(
                f"loss_scale must be positive, got {self.loss_scale}"
            )
        if self.l1_iters < 1 or self.irls_iters < 1:
            raise InvalidArgumentError("l1_iters and irls_iters must be >= 1")
        if self.refine_loss not in IRLS_LOSSES:
            raise InvalidArgumentError(
                f"refine_loss must be one of {IRLS_LOSSES}, got {self.refine_loss!r}"
            )
        if self.refine_iters < 0:
            raise InvalidArgumentError(f"refine_iters must be >= 0, got {self.refine_iters}")
        if not 0.0 <= self.weight_floor < 1.0:
            raise InvalidArgumentError(
                f"weight_floor must lie in [0, 1), got {self.weight_floor}"
            )
        if self.step_tol <= 0.0:
            raise InvalidArgumentError(f"step_tol must be positive, got {self.step_tol}")


@dataclass
class PipelineConfig:
    """The three hyperparameters of the odometry loop plus solver settings."""

    f_window: int = 4
    r_window: int = 10
    theta_matches: int = 100
    mode: str = "incremental"
    loops: bool = True
    workers: int = 1
    seed: int = 0
    relrot: RelRotConfig = field(default_factory=RelRotConfig)
    irls: IrlsConfig = field(default_factory=IrlsConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check cross-field invariants; called again after updates."""
        if self.f_window < 1:
            raise InvalidArgumentError(f"f_window must be >= 1, got {self.f_window}")
        if self.r_window < self.f_window:
            raise InvalidArgumentError(
                f"r_window ({self.r_window}) must be >= f_window ({self.f_window})"
            )
        if self.theta_matches < self.relrot.min_sample:
            raise InvalidArgumentError(
                f"theta_matches ({self.theta_matches}) must be >= min_sample ({self.relrot.min_sample})"
            )
        # Built-in modes live in the strategy registry; plug-ins may add more
        if not isinstance(self.mode, str) or not self.mode.isidentifier():
            raise InvalidArgumentError(f"mode must be a strategy name, got {self.mode!r}")
        if self.workers < 1:
            raise InvalidArgumentError(f"workers must be >= 1, got {self.workers}")


@dataclass
class RotvoConfig:
    """Central configuration for the rotvo command line."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    # Logging settings
    log_level: str = "INFO"
    log_file: str | None = None

    def update_from_file(self, path: str | Path) -> None:
        """Load a TOML config file (or a run manifest) over the current values."""
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as e:
            raise InvalidArgumentError(f"Config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise InvalidArgumentError(f"Invalid TOML in {path}: {e}") from e

        # Manifests nest everything under [config]
        data = data.get("config", data)

        for key in ("log_level", "log_file"):
            if key in data:
                setattr(self, key, data[key])

        pipeline = data.get("pipeline", {})
        relrot = pipeline.pop("relrot", None) or data.get("relrot", {})
        irls = pipeline.pop("irls", None) or data.get("irls", {})
        self.pipeline = PipelineConfig(
            **_merge(self.pipeline, pipeline, exclude=("relrot", "irls")),
            relrot=RelRotConfig(**_merge(self.pipeline.relrot, relrot)),
            irls=IrlsConfig(**_merge(self.pipeline.irls, irls)),
        )
        logger.debug(f"Loaded config file: {path}")

    def update_from_cli_args(self, **kwargs) -> None:
        """Update configuration from command line arguments.

        Keys are matched against the application settings first, then the
        pipeline, relrot and irls settings. ``None`` values are ignored.
        """
        targets = (self, self.pipeline, self.pipeline.relrot, self.pipeline.irls)
        for key, value in kwargs.items():
            if value is None:
                continue
            for target in targets:
                if key in {f.name for f in fields(target)}:
                    setattr(target, key, value)
                    logger.debug(f"Updated config: {key}={value}")
                    break
            else:
                raise InvalidArgumentError(f"Unknown configuration key: {key}")

        # Re-run validation on the mutated dataclasses
        self.pipeline.relrot.__post_init__()
        self.pipeline.irls.__post_init__()
        self.pipeline.validate()

    def to_flat_dict(self) -> dict[str, Any]:
        """Resolved configuration as dotted keys, for the run manifest."""
        flat: dict[str, Any] = {"log_level": self.log_level}
        for key, value in asdict(self.pipeline).items():
            if isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    flat[f"pipeline.{key}.{sub_key}"] = sub_value
            else:
                flat[f"pipeline.{key}"] = value
        return flat


def _merge(current, overrides: dict, exclude: tuple[str, ...] = ()) -> dict:
    names = {f.name for f in fields(current)} - set(exclude)
    unknown = set(overrides) - names - set(exclude)
    if unknown:
        raise InvalidArgumentError(f"Unknown configuration keys: {sorted(unknown)}")
    merged = {name: getattr(current, name) for name in names}
    merged.update({k: v for k, v in overrides.items() if k in names})
    return merged

