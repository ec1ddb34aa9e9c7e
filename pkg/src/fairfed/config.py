"""Versioned JSON experiment configuration.

Every section is a flat dataclass; unknown keys are rejected so typos fail
loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DEFAULT_SPEC, ShardSpec
from .errors import ConfigError
from .federation import FederationConfig
from .objective import FairnessPreset

SCHEMA_VERSION = 1

DEFAULT_PRESETS = ["fedavg", "egalitarian", "rawls:5", "desert", "utilitarian"]


@dataclass
class DataSection:
    source: str = "synthetic"
    seed: int = 0
    num_classes: int = 5
    # synthetic generator
    num_features: int = 2
    noise_rate: float = 0.2
    spread: float = 0.15
    overlap: float = 0.5
    # idx source: clean pair, optional ambiguous pair
    images: str | None = None
    labels: str | None = None
    ambiguous_images: str | None = None
    ambiguous_labels: str | None = None
    # idx source without an ambiguous pair: share of rows turned ambiguous
    ambiguous_fraction: float = 0.5

    def validate(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {self.source!r}")
        if self.source == "idx" and not (self.images and self.labels):
            raise ConfigError("data.source 'idx' needs data.images and data.labels")
        if (self.ambiguous_images is None) != (self.ambiguous_labels is None):
            raise ConfigError("give both data.ambiguous_images and data.ambiguous_labels or neither")
        if not 0 <= self.noise_rate <= 1 or not 0 <= self.ambiguous_fraction <= 1:
            raise ConfigError("noise_rate and ambiguous_fraction must lie in [0, 1]")


@dataclass
class ShardSection:
    clean: list[int] = field(default_factory=lambda: list(DEFAULT_SPEC.clean))
    ambiguous: list[int] = field(default_factory=lambda: list(DEFAULT_SPEC.ambiguous))
    shard_size: int = DEFAULT_SPEC.shard_size
    test_fraction: float = 0.2
    global_test_size: int = 1000

    def spec(self) -> ShardSpec:
        return ShardSpec(tuple(self.clean), tuple(self.ambiguous), self.shard_size)

    def validate(self):
        self.spec()
        if not 0 <= self.test_fraction < 1 or self.global_test_size < 1:
            raise ConfigError("need 0 <= test_fraction < 1 and global_test_size >= 1")


@dataclass
class FederationSection:
    rounds: int = 100
    local_epochs: int = 1
    learning_rate: float = 0.1
    batch_size: int = 32
    solo_epochs: int = 500
    solo_learning_rate: float = 0.1
    solo_batch_size: int = 128
    hidden_dim: int = 128

    def to_config(self, preset: FairnessPreset, seed: int, threads: int = 1) -> FederationConfig:
        return FederationConfig(preset=preset, master_seed=seed, threads=threads,
                                **dataclasses.asdict(self))

    def validate(self):
        self.to_config(FairnessPreset("fedavg"), 0)


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    data: DataSection = field(default_factory=DataSection)
    shards: ShardSection = field(default_factory=ShardSection)
    federation: FederationSection = field(default_factory=FederationSection)
    presets: list[str] = field(default_factory=lambda: list(DEFAULT_PRESETS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    out: str = "results"
    threads: int = 1

    def validate(self) -> ExperimentConfig:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        self.data.validate()
        self.shards.validate()
        self.federation.validate()
        if not self.presets:
            raise ConfigError("need at least one preset")
        for p in self.presets:
            FairnessPreset.parse(p)
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list without duplicates")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def parsed_presets(self) -> list[FairnessPreset]:
        return [FairnessPreset.parse(p) for p in self.presets]

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        return _build(cls, raw, "").validate()

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"data": DataSection, "shards": ShardSection, "federation": FederationSection}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS and cls is ExperimentConfig:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            _check_type(f"{where}.{key}" if where else key, value, getattr(defaults, key))
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _check_type(name, value, default):
    if default is None:
        ok = value is None or isinstance(value, str)
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{name}: unexpected value {value!r}")
