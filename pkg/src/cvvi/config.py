"""Experiment configuration: a flat JSON object of run settings plus sweep grids.

Keys mirror the fields of ``ExperimentConfig``; lists are plain JSON arrays.
Values given on the command line override the file.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cv import resolve_cv_set
from .engine import RunConfig
from .errors import ConfigError

DEFAULT_SUBSETS = ["none", "S4", "S5", "S6", "S7", "c5", "c7"]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic:blobs2d"
    lr: float = 0.1
    iterations: int = 500
    batch_size: int = 10
    momentum: float = 0.9
    gamma: float = 0.02
    v0: float = 1e-3
    cvs: str = "S7"
    seed: int = 0
    seeds: int = 50
    local_reparam: bool = False
    elbo_samples: int = 16
    rp2_fallback: bool = True
    timing: bool = False
    lrs: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    subsets: list = field(default_factory=lambda: list(DEFAULT_SUBSETS))
    v0_grid: list = field(default_factory=lambda: [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    M_grid: list = field(default_factory=lambda: [10, 20, 50, 100, 200])
    lags: list = field(default_factory=lambda: [0, 10])
    n_rep: int = 100
    n_outer: int = 50
    out: str = "results"

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.n_rep < 1 or self.n_outer < 1:
            raise ConfigError("n_rep and n_outer must be >= 1")
        for s in self.subsets:
            resolve_cv_set(s)
        self.run_config()  # validates the shared run fields

    def run_config(self, **overrides) -> RunConfig:
        keys = {f.name for f in fields(RunConfig)}
        base = {k: v for k, v in asdict(self).items() if k in keys}
        base.update(overrides)
        return RunConfig(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in data.items()})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def _coerce(f, value):
    default = f.default_factory() if callable(f.default_factory) else f.default
    name = f.name
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        kind = type(default[0]) if default else str
        if kind is str:
            return [str(v) for v in value]
        if kind is int:
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and int(v) == v for v in value):
                raise ConfigError(f"{name} must be a list of integers")
            return [int(v) for v in value]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of numbers")
        return [float(v) for v in value]
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value
