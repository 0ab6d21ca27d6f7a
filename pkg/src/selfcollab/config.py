"""Run configuration: a strict, nested YAML document with every knob defaulted.

Unknown keys and wrongly typed values are rejected with the offending key
named in the error message.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

OUTPUT_ROOT_ENV = "SELFCOLLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class CorpusConfig(_Section):
    kind: Literal["procedural", "png"] = "procedural"
    n_sources: int = Field(64, ge=16)
    n_validation: int = Field(8, ge=1)
    size: int = Field(128, ge=16)
    channels: Literal[1, 3] = 1
    path: str | None = None


class NoiseConfig(_Section):
    sigma_read: float = Field(0.04, ge=0)
    sigma_shot: float = Field(0.02, ge=0)
    seed: int = 0


class NetworkConfig(_Section):
    denoiser: Literal["linear_conv", "dncnn_lite", "unet_lite"] = "dncnn_lite"
    denoiser_width: int = Field(32, ge=1)
    denoiser_depth: int = Field(5, ge=1)
    generator_width: int = Field(32, ge=1)
    generator_blocks: int = Field(6, ge=1)
    noise_skip: bool = True
    ne_init: Literal["box", "identity"] = "box"
    discriminator_width: int = Field(32, ge=1)
    discriminator_layers: int = Field(3, ge=1)


class BlurLevel(_Section):
    size: int = Field(ge=1)
    weight: float = Field(ge=0)

    @field_validator("size")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("blur window size must be odd")
        return v


class TrainConfig(_Section):
    lr: float = Field(1e-4, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    lambda_bgm: float = Field(6.0, ge=0)
    lambda_ssim: float = Field(1.0, ge=0)
    blur_levels: tuple[BlurLevel, ...] = (
        BlurLevel(size=3, weight=0.01),
        BlurLevel(size=9, weight=0.1),
        BlurLevel(size=15, weight=1.0),
    )
    blur_std_ratio: float = Field(1.0 / 3.0, gt=0)
    bgm_mode: Literal["all", "branch2"] = "all"
    batch: int = Field(8, ge=1)
    patch: int = Field(64, ge=16)
    eval_interval: int = Field(100, ge=1)
    checkpoint_interval: int = Field(0, ge=0)
    dtype: Literal["float32", "float64"] = "float32"
    augment: bool = False
    restore_best: bool = True
    collapse_threshold: float = Field(1e-4, ge=0)
    collapse_steps: int = Field(200, ge=1)

    @field_validator("blur_levels", mode="before")
    @classmethod
    def _levels(cls, v):
        if isinstance(v, list):
            return tuple(BlurLevel.model_validate(x) if isinstance(x, dict) else x for x in v)
        return v


class ScheduleConfig(_Section):
    max_iterations: int = Field(8, ge=1)
    baseline_steps: int = Field(2000, ge=0)
    steps_per_iteration: int = Field(1000, ge=0)
    stage2_start: int = Field(4, ge=1)
    stage2_patch: int = Field(80, ge=16)
    stage2_batch: int = Field(4, ge=1)
    stop_delta_db: float = Field(0.02, ge=0)
    reset_optimizer: bool = True
    reinit_denoiser: bool = False
    reinit_gan: bool = False


class RunConfig(_Section):
    seed: int = 0
    output_dir: str = "runs/default"
    corpus: CorpusConfig = CorpusConfig()
    noise: NoiseConfig = NoiseConfig()
    networks: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    schedule: ScheduleConfig = ScheduleConfig()

    @model_validator(mode="after")
    def _patches_fit(self):
        for key, p in (("train.patch", self.train.patch), ("schedule.stage2_patch", self.schedule.stage2_patch)):
            if p > self.corpus.size:
                raise ValueError(f"{key}={p} exceeds corpus.size={self.corpus.size}")
        return self

    def to_dict(self) -> dict:
        return _lists(self.model_dump(mode="python"))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with nested overrides, e.g. ``with_overrides(train={"batch": 2})``."""
        data = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return parse_config(data)


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{key}: {e['msg']}")
    return "; ".join(lines)


def parse_config(source=None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a path, YAML text or a dict.

    ``None`` and empty documents give the all-defaults config.
    """
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
            text = Path(source).read_text()
        else:
            text = str(source)
        data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def write_effective(cfg: RunConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.yaml"
    path.write_text(cfg.to_yaml())
    return path


def resolve_output(path) -> Path:
    """Relative output paths are placed under ``$SELFCOLLAB_OUTPUT_ROOT`` when set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path
