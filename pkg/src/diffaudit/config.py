"""Audit configuration: a flat key = value file format, typed parsing,
cross-field validation, and predictor construction.

Unknown keys are errors so typos fail fast instead of silently running
with a default.  Every knob mirrors a CLI flag; CLI values override the
file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule, TrajectoryConfig, build_linear_schedule
from .frequency import LAPLACIAN_MEAN_ABS, LAPLACIAN_SUM_SQUARED, ThresholdBand
from .ingest import DatasetManifest, ingest, load_image
from .predictors import (ConstantPredictor, ExternalPredictor,
                         GaussianAnalyticPredictor, MemorizingPredictor,
                         NoisePredictor)
from .similarity import SsimParams

ATTACK_FCRE = "fcre"
ATTACK_SECMI = "secmi"
ATTACK_LOSS = "loss"
_ATTACKS = (ATTACK_FCRE, ATTACK_SECMI, ATTACK_LOSS)


class ConfigError(Exception):
    """Invalid configuration; maps to CLI exit code 1."""


@dataclass(frozen=True)
class AuditConfig:
    # noise schedule
    total_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # trajectory
    sampling_steps: int = 100
    attack_step: int = 100
    round_trips: int = 1
    # frequency band
    l_min: float = 15.0
    l_max: float = 85.0
    patch_size: int = 8
    laplacian_mode: str = LAPLACIAN_SUM_SQUARED
    # scoring
    dynamic_range: float = 2.0
    use_ssim: bool = True
    l2_normalize: bool = True
    # attack + predictor
    attack: str = ATTACK_FCRE
    predictor: str = ""
    gaussian_mean: str = "zero"
    gaussian_std: float = 1.0
    memorizing_bank: str = "members"
    memorizing_temperature: float = 0.05
    external_timeout: float = 30.0
    loss_steps: int = 10
    # evaluation
    histogram_bins: int = 50
    fpr_target: float = 0.01
    balanced_asr: bool = True
    # execution
    seed: int = 0
    workers: int = 1
    luminance: bool = False
    export_masks: bool = False
    output_dir: str = "audit-out"

    def validate(self) -> "AuditConfig":
        if self.total_steps < 2:
            raise ConfigError(f"total_steps must be >= 2, got {self.total_steps}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got "
                f"({self.beta_start}, {self.beta_end})")
        try:
            traj = TrajectoryConfig(total_steps=self.total_steps,
                                    sampling_steps=self.sampling_steps,
                                    attack_step=self.attack_step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.attack_step + traj.stride > self.total_steps:
            raise ConfigError(
                f"attack_step {self.attack_step} leaves no headroom for the "
                f"round trip (stride {traj.stride}, total {self.total_steps})")
        try:
            ThresholdBand(self.l_min, self.l_max)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        if self.laplacian_mode not in (LAPLACIAN_SUM_SQUARED, LAPLACIAN_MEAN_ABS):
            raise ConfigError(f"unknown laplacian_mode {self.laplacian_mode!r}")
        if self.attack not in _ATTACKS:
            raise ConfigError(
                f"unknown attack {self.attack!r} (expected one of {', '.join(_ATTACKS)})")
        if not self.predictor:
            raise ConfigError("predictor must be set (e.g. 'constant:0', "
                              "'gaussian', 'memorizing', 'external:host:port')")
        if self.round_trips < 1:
            raise ConfigError(f"round_trips must be >= 1, got {self.round_trips}")
        if self.dynamic_range <= 0:
            raise ConfigError(f"dynamic_range must be positive, got {self.dynamic_range}")
        if self.memorizing_temperature <= 0:
            raise ConfigError(
                f"memorizing_temperature must be positive, got "
                f"{self.memorizing_temperature}")
        if self.gaussian_std <= 0:
            raise ConfigError(f"gaussian_std must be positive, got {self.gaussian_std}")
        if self.loss_steps < 1:
            raise ConfigError(f"loss_steps must be positive, got {self.loss_steps}")
        if self.histogram_bins < 2:
            raise ConfigError(f"histogram_bins must be >= 2, got {self.histogram_bins}")
        if not 0.0 < self.fpr_target < 1.0:
            raise ConfigError(f"fpr_target must lie in (0, 1), got {self.fpr_target}")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")
        return self

    @property
    def stride(self) -> int:
        return self.total_steps // self.sampling_steps

    def schedule(self) -> NoiseSchedule:
        return build_linear_schedule(self.total_steps, self.beta_start, self.beta_end)

    def ssim_params(self) -> SsimParams:
        return SsimParams.from_dynamic_range(self.dynamic_range)

    def band(self) -> ThresholdBand:
        return ThresholdBand(self.l_min, self.l_max)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(AuditConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into typed overrides."""
    overrides: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        overrides[key] = _coerce(key, raw)
    return overrides


def load_config(path: str | Path | None = None, **cli_overrides) -> AuditConfig:
    """Build a validated config from an optional file plus CLI overrides."""
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text))
    for key, value in cli_overrides.items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return AuditConfig(**values).validate()


def write_config(config: AuditConfig, path: str | Path) -> None:
    lines = [f"{name} = {value}" for name, value in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_predictor(config: AuditConfig,
                    dataset: DatasetManifest | None = None) -> NoisePredictor:
    """Instantiate the predictor named by the config.

    ``memorizing`` draws its bank from the dataset's member images by
    default, or from every entry of a separate manifest when
    ``memorizing_bank`` is a path.  ``gaussian`` centers on zero or on a
    mean image loaded from a path.
    """
    spec = config.predictor.strip()
    kind, _, arg = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "constant":
        try:
            value = float(arg) if arg else 0.0
        except ValueError as exc:
            raise ConfigError(f"bad constant predictor value {arg!r}") from exc
        return ConstantPredictor(value=value)
    if kind == "gaussian":
        if config.gaussian_mean == "zero":
            if dataset is None:
                raise ConfigError("gaussian predictor with mean 'zero' needs a "
                                  "dataset to size the mean image")
            shape = (dataset.resolution[0], dataset.resolution[1], dataset.channels)
            mean = np.zeros(shape)
        else:
            mean = load_image(Path(config.gaussian_mean),
                              luminance_only=config.luminance)
        return GaussianAnalyticPredictor(mean, config.gaussian_std)
    if kind == "memorizing":
        source = config.memorizing_bank
        if source == "members":
            if dataset is None:
                raise ConfigError("memorizing predictor with bank 'members' "
                                  "needs the audit dataset")
            bank = [e.pixels for e in dataset.members]
        else:
            bank_set = ingest(Path(source), luminance_only=config.luminance)
            bank = [e.pixels for e in bank_set.entries]
        if not bank:
            raise ConfigError(f"memorizing bank {source!r} is empty")
        return MemorizingPredictor(bank, config.memorizing_temperature)
    if kind == "external":
        if not arg:
            raise ConfigError("external predictor needs host:port")
        try:
            return ExternalPredictor.from_endpoint(arg, timeout=config.external_timeout)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown predictor spec {spec!r}")
