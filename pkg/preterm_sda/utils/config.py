"""Service and experiment configuration definitions."""

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from preterm_sda.core.errors import ConfigError
from preterm_sda.utils.constants import GA_MAX_WEEKS, GA_MIN_WEEKS
from preterm_sda.utils.overrides import apply_overrides


class ServiceConfig(BaseSettings):
    """
    Process-level settings, loaded from environment variables or a .env file.
    """

    # Upper bound on worker threads for record preparation, synthesis and inference.
    SDA_THREADS: int = Field(default=1, ge=1)
    # Root logging level.
    LOG_LEVEL: str = "INFO"

    # Environment loading is handled explicitly in main.py via load_dotenv.
    model_config = SettingsConfigDict(extra="ignore")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(_Section):
    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    batch_size: int = Field(default=64, ge=1)
    patience_epochs: int = Field(default=8, ge=1)
    max_epochs: int = Field(default=100, ge=1)
    use_lars: bool = False
    lars_trust_floor: float = Field(default=1e-8, gt=0)
    lars_trust_coefficient: float = Field(default=1.0, gt=0)
    seed: int = 0
    # Minimum seizure:non-seizure window ratio reached by oversampling; 0 disables it.
    seizure_oversample_ratio: float = Field(default=0.25, ge=0)
    stride_s: float = Field(default=1.0, ge=1, le=8)
    label_threshold: float = Field(default=0.5, gt=0, le=1)
    edge_margin_s: float = Field(default=2.0, ge=0)
    val_records: int = Field(default=3, ge=1)
    ga_val_records: int = Field(default=2, ge=1)
    dtype: Literal["float32", "float64"] = "float32"
    architecture: Literal["standard", "tiny"] = "standard"


class GaGroupConfig(_Section):
    group: Literal[1, 2, 3] | None = None
    decay_span_weeks: float = Field(default=4.0, gt=0)


class InferConfig(_Section):
    stride_s: float = Field(default=1.0, ge=1, le=8)
    smooth_width: int = Field(default=15, ge=1)
    batch_size: int = Field(default=256, ge=1)

    @field_validator("smooth_width")
    @classmethod
    def _odd_width(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("smooth_width must be odd")
        return value


class FusionConfig(_Section):
    grid_step: float = Field(default=0.05, gt=0, le=1)
    smooth_before_fusion: bool = True


class EvalConfig(_Section):
    n_thresholds: int = Field(default=201, ge=2)
    operating_fdh: float | None = Field(default=0.25, ge=0)
    loo: bool = False
    pooled_fdh: bool = True
    seizure_only: bool = False
    min_event_s: float | None = None


class SynthConfig(_Section):
    n_infants: int = Field(default=18, ge=1)
    ga_range_weeks: tuple[float, float] = (23.0, 32.0)
    fs_hz: float = 256.0
    n_channels: int = Field(default=8, ge=1)
    record_minutes: float = Field(default=30.0, gt=0)
    seizure_rate_per_hour: float = Field(default=6.0, ge=0)
    seed: int = 0
    short_seizure_fraction: float = Field(default=0.46, ge=0, le=1)
    seizure_freq_band_hz: tuple[float, float] = (0.5, 3.0)
    focal_channel_count: int = Field(default=2, ge=1)
    seizure_amplitude_uv: float = Field(default=80.0, ge=0)
    n_test_infants: int = Field(default=4, ge=0)
    n_val_infants: int = Field(default=2, ge=0)
    n_control_infants: int = Field(default=1, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        low, high = self.ga_range_weeks
        if not GA_MIN_WEEKS <= low <= high <= GA_MAX_WEEKS:
            raise ValueError(f"ga_range_weeks must lie within [{GA_MIN_WEEKS}, {GA_MAX_WEEKS}]")
        band_low, band_high = self.seizure_freq_band_hz
        if not 0 < band_low < band_high < self.fs_hz / 2:
            raise ValueError("seizure_freq_band_hz must lie within (0, fs/2)")
        if self.focal_channel_count > self.n_channels:
            raise ValueError("focal_channel_count cannot exceed n_channels")
        if self.n_test_infants + self.n_val_infants > self.n_infants:
            raise ValueError("More test and validation infants than infants")
        if self.n_control_infants > self.n_test_infants:
            raise ValueError("Control infants are drawn from the test split")
        return self


class PathsConfig(_Section):
    manifest: str | None = None
    output_dir: str = "runs"
    model: str | None = None
    pretrained: str | None = None
    # Two fusion inputs: the preterm classifier first, the term classifier second.
    classifiers: list[str] = Field(default_factory=list)
    # GA group id -> model; when set, eval routes each record by its GA instead of using `model`.
    group_models: dict[Literal["1", "2", "3"], str] = Field(default_factory=dict)
    # Window batches are cached here when set.
    cache_dir: str | None = None


TrainMode = Literal["base", "ensemble", "ga_transfer", "ga_scratch"]


class ExperimentConfig(_Section):
    mode: TrainMode = "ensemble"
    synth: SynthConfig = Field(default_factory=SynthConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ga: GaGroupConfig = Field(default_factory=GaGroupConfig)
    infer: InferConfig = Field(default_factory=InferConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)


def load_experiment_config(
    path: Path | str | None = None,
    assignments: list[str] | None = None,
    flag_values: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Reads a JSON (or YAML) config file, then applies --set assignments and flags.

    ``flag_values`` maps JSONPath expressions to values and wins over both the file
    and the assignments.
    """
    data: Any = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file does not exist: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain an object")

    data = apply_overrides(data, assignments or [])
    for json_path, value in (flag_values or {}).items():
        if value is not None:
            data = apply_overrides(data, [f"{json_path}={json.dumps(value)}"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def config_hash(config: BaseModel) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
