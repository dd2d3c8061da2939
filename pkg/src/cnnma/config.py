"""Experiment configuration and its YAML file form.

Example file (every key optional)::

    data_dir: data/mnist
    subset: 10000          # stratified training subset, 0 = full split
    test_subset: 0         # 0 = full evaluation split
    split: test            # evaluation split: test | train
    epochs: 1
    learning_rate: 1.0
    batch_size: 100
    repeats: 5
    seed: 0
    mode: cnn_ma           # baseline | cnn_ma | sa_baseline | compare |
                           # sweep_delta | sweep_neighborhood
    beta_init: 1.0
    workers: 1
    anneal:
      neighborhood_size: 10
      max_iterations: 10
      initial_kinetic: 100.0
      cooling_factor: 0.95
      delta_scale: 0.001
      strict_microcanonical: false
      signed_delta: true
      initial_temperature: 1.0
      epsilon: 0.001
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .annealer import AnnealConfig

MODES = ("baseline", "cnn_ma", "sa_baseline", "compare", "sweep_delta", "sweep_neighborhood")

MODE_METHODS = {
    "baseline": ("baseline",),
    "cnn_ma": ("baseline", "cnn_ma"),
    "sa_baseline": ("baseline", "cnn_sa"),
    "compare": ("baseline", "cnn_ma", "cnn_sa"),
    "sweep_delta": ("baseline", "cnn_ma"),
    "sweep_neighborhood": ("baseline", "cnn_ma"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data_dir: str = "data/mnist"
    subset: int = 0
    test_subset: int = 0
    split: str = "test"
    epochs: int = 1
    learning_rate: float = 1.0
    batch_size: int = 100
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    repeats: int = 5
    seed: int = 0
    mode: str = "cnn_ma"
    beta_init: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.subset < 0 or self.test_subset < 0:
            raise ConfigError("subset sizes must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.split not in ("test", "train"):
            raise ConfigError(f"split must be 'test' or 'train', got {self.split!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def methods(self) -> tuple[str, ...]:
        return MODE_METHODS[self.mode]

    def with_anneal(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, anneal=dataclasses.replace(self.anneal, **changes))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d or {})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    anneal = d.pop("anneal", None) or {}
    anneal_known = {f.name for f in dataclasses.fields(AnnealConfig)}
    unknown = set(anneal) - anneal_known
    if unknown:
        raise ConfigError(f"unknown anneal keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(anneal=AnnealConfig(**anneal), **d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
