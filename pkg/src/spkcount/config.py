"""Experiment configuration: one JSON document, fully defaulted, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .crnn import CrnnConfig, TrainConfig
from .roomsim import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSizes:
    train: int = 108
    val: int = 9
    test: int = 27


@dataclass(frozen=True)
class SweepGrid:
    kernel_sizes: tuple = (3, 5, 7)
    n_frames: tuple = (10, 20, 30, 40, 50)
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    splits: SplitSizes = field(default_factory=SplitSizes)
    crnn: CrnnConfig = field(default_factory=CrnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    master_seed: int = 0
    output_dir: str = "runs/default"
    shard_size: int = 16
    window_stride: int = 0  # 0 means non-overlapping training windows

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
