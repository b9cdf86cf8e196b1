"""Model and training configuration, flat key/value files and env overrides."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

ENV_PREFIX = "JGCOUNT_"


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    t_mp: int = 5
    h_init: int = 4
    h_max: int = 8
    t_head: int = 1000
    gamma: float = 1.0
    delta: float = 0.1
    leaky_slope: float = 0.2
    i_bound: int = 3
    pooling: str = "mean"
    activation: str = "tanh"
    readout_scale: str = "vars"
    readout_norm: bool = True
    hierarchical: bool = True
    constraint_aware: bool = True
    dynamic_heads: bool = True

    def __post_init__(self):
        if self.h_init > self.h_max:
            raise ValueError("h_init must not exceed h_max")
        if self.d % self.h_max:
            raise ValueError(f"d={self.d} must be divisible by h_max={self.h_max}")
        if self.pooling not in ("mean", "sum", "size"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.readout_scale not in ("none", "vars"):
            raise ValueError(f"unknown readout_scale {self.readout_scale!r}")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.i_bound < 1 or self.t_mp < 0 or self.t_head < 1:
            raise ValueError("i_bound and t_head must be positive, t_mp non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    n_min: int = 10
    n_max: int = 20
    ratio_min: float = 3.0
    ratio_max: float = 4.3
    num_instances: int = 2000
    time_budget: float = 1800.0

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if self.n_max > 30:
            raise ValueError("n_max above 30 is beyond the exact counter's budget")
        if self.ratio_min > self.ratio_max:
            raise ValueError("ratio_min exceeds ratio_max")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _coerce(value: Any, kind: type):
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


def _types(cls) -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(cls)}


def apply_overrides(cfg, values: Mapping[str, Any]):
    """Replace fields from ``values``; unknown keys raise KeyError."""
    types = _types(type(cfg))
    clean = {}
    for key, value in values.items():
        if key not in types:
            raise KeyError(f"unknown config key {key!r} for {type(cfg).__name__}")
        clean[key] = _coerce(value, types[key])
    return dataclasses.replace(cfg, **clean)


def read_flat_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; an optional section header is ignored."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string("[__top__]\n" + text)
    out: dict[str, str] = {}
    for section in parser.sections():
        out.update({k: v.strip().strip('"') for k, v in parser.items(section)})
    return out


def env_overrides(keys, environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k: environ[ENV_PREFIX + k.upper()] for k in keys if ENV_PREFIX + k.upper() in environ}


def split_keys(values: Mapping[str, Any]) -> tuple[dict, dict, dict]:
    """Route flat keys to (model, train, other) groups."""
    mk, tk = set(_types(ModelConfig)), set(_types(TrainConfig))
    model = {k: v for k, v in values.items() if k in mk}
    train = {k: v for k, v in values.items() if k in tk}
    other = {k: v for k, v in values.items() if k not in mk and k not in tk}
    return model, train, other


def to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)
