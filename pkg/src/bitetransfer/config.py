"""Experiment configuration: one nested mapping that every CLI run resolves and writes next to its outputs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .classify.protocols import ModelConfig
from .errors import ConfigurationError, OutputSchemaError
from .sim.ablation import AblationConfig
from .sim.episode import EpisodeConfig
from .sim.interactions import GeneratorParams

CONFIG_VERSION = "experiment-config-v1"


@dataclass(frozen=True)
class DataConfig:
    n_participants: int = 6
    n_per_label_per_participant: int = 128
    trait_spread: float = 1.0

    def validate(self) -> None:
        if self.n_participants < 1 or self.n_per_label_per_participant < 1:
            raise ConfigurationError("dataset sizes must be positive")
        if self.trait_spread < 0:
            raise ConfigurationError("trait_spread must be non-negative")


@dataclass(frozen=True)
class PerceptionBenchConfig:
    occlusion: str = "full"
    trials: int = 100

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    template: str | None = None          # head template file; None = shipped default
    rig: str | None = None               # camera rig file; None = shipped default
    output: str | None = None
    scenario: str = "feeding1"
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    perception: PerceptionBenchConfig = field(default_factory=PerceptionBenchConfig)

    def validate(self) -> None:
        self.data.validate()
        self.model.validate()
        self.episode.validate()
        self.ablation.validate()
        self.perception.validate()

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **_plain(asdict(self))}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def merge(obj, updates: dict, where: str = "config"):
    """Copy of dataclass ``obj`` with ``updates`` applied recursively; unknown keys are rejected."""
    if not isinstance(updates, dict):
        raise ConfigurationError(f"{where} must be a mapping")
    names = {f.name: f for f in fields(obj)}
    unknown = sorted(set(updates) - set(names))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    changes = {}
    for key, value in updates.items():
        current = getattr(obj, key)
        if is_dataclass(current):
            changes[key] = merge(current, value, f"{where}.{key}")
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(tuple(x) if isinstance(x, list) else x for x in value)
        else:
            changes[key] = value
    try:
        return replace(obj, **changes)
    except TypeError as exc:
        raise ConfigurationError(f"bad value in {where}: {exc}") from None


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d or {})
    version = d.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {version!r}")
    cfg = merge(ExperimentConfig(), d)
    cfg.validate()
    return cfg


def load_config(path) -> dict:
    """Raw mapping from a YAML or JSON config file (validated later by :func:`from_dict`)."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config file {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must contain a mapping")
    return data


# --------------------------------------------------------------------------- output schemas

def schema(name: str) -> dict:
    text = resources.files("bitetransfer.data").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_output(doc, name: str) -> None:
    """Check an output document against its shipped JSON schema."""
    try:
        jsonschema.validate(doc, schema(name))
    except jsonschema.ValidationError as exc:
        raise OutputSchemaError(f"{name} output does not match its schema: {exc.message}") from None


def dumps(doc) -> str:
    """Canonical JSON text used for every output file."""
    return json.dumps(_plain(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
