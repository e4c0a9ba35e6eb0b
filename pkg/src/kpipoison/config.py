"""Experiment configuration: one structured file (YAML or JSON) per run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .detector.train import TrainConfig
from .detector.windows import SEQUENCE_LENGTHS
from .emulator import EmulationConfig
from .errors import ConfigError
from .gate import GatePolicy
from .injector import InjectionPoint, IntervalSpec


@dataclass
class AttackConfig:
    n_victims_per_slice: int = 5
    amplification_factor: float = 1.5
    n_intervals: int = 6
    min_len_s: int = 60
    max_len_s: int = 300
    injection_point: InjectionPoint = InjectionPoint.E2_INTERFACE_MITM

    def __post_init__(self):
        self.injection_point = InjectionPoint(self.injection_point)

    @property
    def interval_spec(self) -> IntervalSpec:
        return IntervalSpec(self.n_intervals, self.min_len_s, self.max_len_s)


@dataclass
class GridConfig:
    sequence_lengths: list[int] = field(default_factory=lambda: list(SEQUENCE_LENGTHS))
    amplification_factors: list[float] = field(default_factory=lambda: [1.2, 1.3, 1.4, 1.5])

    def validate(self) -> None:
        if not self.sequence_lengths or not self.amplification_factors:
            raise ConfigError("grid lists must be non-empty")
        if any(int(L) < 1 for L in self.sequence_lengths):
            raise ConfigError("sequence lengths must be >= 1")
        if any(not float(f) > 0 for f in self.amplification_factors):
            raise ConfigError("amplification factors must be > 0")


@dataclass
class GateConfig:
    policy: GatePolicy = GatePolicy.DISCARD_POISONED_AND_NOTIFY
    seq_len: int = 10
    x_mbps_per_prb: float = 10.0

    def __post_init__(self):
        self.policy = GatePolicy(self.policy)


@dataclass
class ExperimentConfig:
    seed: int = 0
    emulation: EmulationConfig = field(default_factory=EmulationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    train_fraction: float = 0.7
    baseline_quantile: float = 0.99

    def __post_init__(self):
        self.apply_seed(self.seed)

    def apply_seed(self, seed: int) -> "ExperimentConfig":
        """Propagate the top-level seed into every stage."""
        self.seed = int(seed)
        self.emulation.seed = self.seed
        self.train.seed = self.seed
        return self

    def validate(self) -> None:
        self.emulation.validate()
        self.train.validate()
        self.grid.validate()
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0 < self.baseline_quantile < 1:
            raise ConfigError("baseline_quantile must lie in (0, 1)")
        if self.attack.n_victims_per_slice < 0:
            raise ConfigError("n_victims_per_slice must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["emulation"]["slice_split"] = list(self.emulation.slice_split)
        d["train"]["hidden"] = list(self.train.hidden)
        d["attack"]["injection_point"] = self.attack.injection_point.value
        d["gate"]["policy"] = self.gate.policy.value
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        sections = {
            "emulation": EmulationConfig,
            "attack": AttackConfig,
            "train": TrainConfig,
            "grid": GridConfig,
            "gate": GateConfig,
        }
        kwargs: dict[str, Any] = {}
        known_types = {f.name: f.type for f in fields(cls)}
        known = set(known_types)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        for name, value in d.items():
            if name in sections:
                kwargs[name] = _build(sections[name], value, name)
            else:
                kwargs[name] = _coerce(known_types[name], value)
        seed = int(kwargs.pop("seed", 0))
        cfg = cls(**kwargs)
        cfg.apply_seed(seed)
        return cfg


def _build(klass, value, section):
    if value is None:
        return klass()
    if not isinstance(value, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    types = {f.name: f.type for f in fields(klass) if f.init}
    allowed = set(types)
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    try:
        return klass(**{k: _coerce(types[k], v) for k, v in value.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section} section: {e}") from e


def _coerce(annotation, v):
    # YAML 1.1 reads exponent literals without a dot (1e-8) as strings
    if annotation in (float, "float") and isinstance(v, str):
        return float(v)
    return v


BUILTIN = ("ci", "paper", "smoke")


def load_config(source: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Load a config file, or one of the bundled presets by name."""
    if source is None:
        cfg = ExperimentConfig()
    else:
        name = str(source)
        if name in BUILTIN:
            text = resources.files("kpipoison.configs").joinpath(f"{name}.yaml").read_text()
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            text = path.read_text()
        try:
            doc = json.loads(text) if name.endswith(".json") else yaml.safe_load(text)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot parse config {name}: {e}") from e
        cfg = ExperimentConfig.from_dict(doc or {})
    if seed is not None:
        cfg.apply_seed(seed)
    cfg.validate()
    return cfg
