"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

STRATEGIES = ("none", "sparse", "distributed-uniform", "distributed-projection", "optimal")
GENERATORS = ("example-symmetric", "example-circle-20", "two-agent", "random")
_TWO_AGENT = re.compile(r"^two-agent\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*\)$")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class ExperimentConfig:
    init: str = "example-symmetric"
    N: Optional[int] = None
    d: Optional[int] = None
    x0: Optional[list] = None
    v0: Optional[list] = None
    K: Optional[float] = None
    sigma: float = 1.0
    beta: float = 1.0
    M: float = 1.0
    strategy: str = "none"
    tau: Union[float, str, None] = 0.01
    h: float = 1e-3
    T: float = 10.0
    stop_on_entry: bool = False
    sparsity_weight: float = 0.1
    grid_points: int = 1000
    damping: float = 0.3
    max_iter: int = 500
    tol: float = 1e-6
    agent: Optional[int] = None
    output: str = "trajectory.csv"
    output_stride: int = 1
    plot: bool = False
    seed: int = 0

    def replace(self, **kw) -> "ExperimentConfig":
        out = dataclasses.replace(self, **kw)
        validate(out)
        return out


KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))
_ALIASES = {"sparsity-weight": "sparsity_weight", "grid-points": "grid_points", "max-iter": "max_iter",
            "output-stride": "output_stride", "stop-on-entry": "stop_on_entry"}


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated floats, got {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _optional(conv):
    def f(text):
        return None if text.strip().lower() in ("", "none", "null") else conv(text)

    return f


def _tau(text: str):
    t = text.strip().lower()
    if t == "auto":
        return "auto"
    if t in ("none", "continuous", "0"):
        return None
    return float(t)


_PARSERS = {
    "init": str.strip,
    "N": _optional(int),
    "d": _optional(int),
    "x0": _optional(_floats),
    "v0": _optional(_floats),
    "K": _optional(float),
    "sigma": float,
    "beta": float,
    "M": float,
    "strategy": str.strip,
    "tau": _tau,
    "h": float,
    "T": float,
    "stop_on_entry": _bool,
    "sparsity_weight": float,
    "grid_points": int,
    "damping": float,
    "max_iter": int,
    "tol": float,
    "agent": _optional(int),
    "output": str.strip,
    "output_stride": int,
    "plot": _bool,
    "seed": int,
}


def canonical_key(key: str) -> str:
    k = key.strip()
    k = _ALIASES.get(k, k)
    if k not in _PARSERS:
        raise ConfigError(f"unknown configuration key {key!r}")
    return k


def parse_value(key: str, text: str):
    k = canonical_key(key)
    try:
        return _PARSERS[k](text)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {k}: {text!r}") from exc


def read_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, val = line.split("=", 1)
        k = canonical_key(key)
        if k in out:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        out[k] = parse_value(k, val)
    return out


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return read_config_text(text)


def two_agent_params(init: str):
    m = _TWO_AGENT.match(init.strip())
    if not m:
        return None
    try:
        return float(m.group(1)), float(m.group(2))
    except ValueError as exc:
        raise ConfigError(f"bad two-agent initial data {init!r}") from exc


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def positive(name, allow_none=False):
        val = getattr(cfg, name)
        if val is None and allow_none:
            return
        if val is None or not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
            raise ConfigError(f"{name} must be positive, got {val!r}")

    for name in ("sigma", "M", "h", "T", "sparsity_weight", "tol"):
        positive(name)
    positive("K", allow_none=True)
    if not cfg.beta >= 0:
        raise ConfigError("beta must be nonnegative")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {', '.join(STRATEGIES)}; got {cfg.strategy!r}")
    if not (cfg.tau is None or cfg.tau == "auto" or (isinstance(cfg.tau, float) and cfg.tau > 0)):
        raise ConfigError(f"tau must be positive, 'auto' or none; got {cfg.tau!r}")
    if not 0 < cfg.damping <= 1:
        raise ConfigError("damping must lie in (0, 1]")
    if cfg.grid_points < 100:
        raise ConfigError("grid_points must be at least 100")
    if cfg.max_iter < 1 or cfg.output_stride < 1:
        raise ConfigError("max_iter and output_stride must be at least 1")
    for name in ("N", "d"):
        val = getattr(cfg, name)
        if val is not None and val < 1:
            raise ConfigError(f"{name} must be at least 1")
    if cfg.N is not None and cfg.N < 2:
        raise ConfigError("N must be at least 2")
    init = cfg.init.strip()
    explicit = cfg.x0 is not None or cfg.v0 is not None
    if init == "explicit" or explicit:
        if cfg.x0 is None or cfg.v0 is None or cfg.N is None:
            raise ConfigError("explicit initial data needs N, x0 and v0")
        d = cfg.d or len(cfg.x0) // cfg.N
        if len(cfg.x0) != cfg.N * d or len(cfg.v0) != cfg.N * d:
            raise ConfigError(f"x0 and v0 must hold N*d = {cfg.N}*{d} values")
    elif two_agent_params(init) is None and init not in GENERATORS:
        raise ConfigError(f"unknown initial data generator {init!r}")
    if init == "random" and cfg.N is None:
        raise ConfigError("init = random needs N")
    if cfg.agent is not None and cfg.agent < 1:
        raise ConfigError("agent is 1-based")
    return cfg


def build_config(*sources: dict) -> ExperimentConfig:
    """Merge dictionaries left to right (later wins) and validate.

    A key present with value ``None`` overrides too, so ``tau = none``
    selects continuous feedback.
    """
    merged = {}
    for src in sources:
        for k, v in src.items():
            merged[canonical_key(k)] = v
    return validate(ExperimentConfig(**merged))


def format_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`read_config_text`."""
    lines = []
    for k in KEYS:
        v = getattr(cfg, k)
        if v is None:
            v = "none"
        elif isinstance(v, list):
            v = ",".join(repr(float(a)) for a in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def explicit_arrays(cfg: ExperimentConfig):
    d = cfg.d or len(cfg.x0) // cfg.N
    return np.reshape(cfg.x0, (cfg.N, d)), np.reshape(cfg.v0, (cfg.N, d))
