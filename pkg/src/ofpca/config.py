"""Fit configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.
Intervals are written ``lo:hi`` and lists are comma separated, e.g.::

    R = 3
    domain = 0:1, 0:1
    inner_knots = 5, 5
    tau_max = 0.001
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError

__all__ = ["FitConfig", "load_config", "parse_config", "defaults_for"]


@dataclass(frozen=True)
class FitConfig:
    R: int = 3
    domain: tuple = ((0.0, 1.0),)
    inner_knots: tuple = (5,)
    degree: int = 3
    batch_size: int = 5
    epochs: int = 3
    optimizer: str = "radam"
    averaging: bool = True
    k_a: int = 0
    a: float = 0.2
    gamma: float = 0.6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    delta: float = 1e-4
    tuning: bool = True
    q: int = 100
    omega: float = 0.5
    W: int = 2
    B: int = 3
    rho: float = math.sqrt(10.0)
    tau_max: float = 0.1
    tau_init: tuple = ()
    tau: float = 0.0
    n_init: int = 1000
    ridge: float = 1e-2
    seed: int = 0
    shuffle: bool = True
    center: str = "none"

    @property
    def dims(self) -> int:
        return len(self.domain)

    @property
    def C(self) -> int:
        return self.W * self.B

    def initial_taus(self) -> list[float]:
        if self.tau_init:
            return list(self.tau_init)
        return [self.tau_max * 10.0 ** (-j) for j in range(self.C)]

    def validate(self) -> "FitConfig":
        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(self.R >= 1, "R", "must be >= 1")
        need(self.dims >= 1, "domain", "needs at least one interval")
        for lo, hi in self.domain:
            need(lo < hi, "domain", f"interval {lo}:{hi} is empty or inverted")
        need(len(self.inner_knots) == self.dims, "inner_knots", "needs one count per dimension")
        need(all(k >= 0 for k in self.inner_knots), "inner_knots", "counts must be >= 0")
        need(self.degree >= 2, "degree", "the roughness penalty needs degree >= 2")
        p = math.prod(k + self.degree + 1 for k in self.inner_knots)
        need(self.R <= p, "R", f"must not exceed the basis size {p}")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.optimizer in ("rsgd", "radam"), "optimizer", "must be rsgd or radam")
        need(self.k_a >= 0, "k_a", "must be >= 0 (0 selects half the first epoch)")
        need(self.a > 0, "a", "must be positive")
        need(0.5 < self.gamma <= 1.0, "gamma", "must lie in (0.5, 1]")
        need(0 <= self.beta1 < 1, "beta1", "must lie in [0, 1)")
        need(0 <= self.beta2 < 1, "beta2", "must lie in [0, 1)")
        need(self.eps > 0, "eps", "must be positive")
        need(self.delta > 0, "delta", "must be positive")
        need(self.q >= 1, "q", "must be >= 1")
        need(0 < self.omega < 1, "omega", "must lie in (0, 1)")
        need(self.W >= 1, "W", "must be >= 1")
        need(self.B >= 1, "B", "must be >= 1")
        need(self.rho > 1, "rho", "must exceed 1")
        need(self.tau_max > 0, "tau_max", "must be positive")
        if self.tau_init:
            need(len(self.tau_init) == self.C, "tau_init", f"needs W*B = {self.C} values")
            need(all(t > 0 for t in self.tau_init), "tau_init", "values must be positive")
        need(self.tau >= 0, "tau", "must be >= 0")
        need(self.n_init >= 1, "n_init", "must be >= 1")
        need(self.ridge > 0, "ridge", "must be positive")
        need(self.center in ("none", "grid-binned-mean"), "center", "must be none or grid-binned-mean")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = [list(iv) for iv in self.domain]
        d["inner_knots"] = list(self.inner_knots)
        d["tau_init"] = list(self.tau_init)
        return d


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_domain(text: str) -> tuple:
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return tuple(out)


_FIELDS = {f.name: f for f in fields(FitConfig)}


def convert(key: str, value: Any) -> Any:
    """Coerce a textual (or already typed) value for ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(value, str):
        return value
    try:
        if key == "domain":
            return _parse_domain(value)
        if key == "inner_knots":
            return tuple(int(v) for v in value.split(","))
        if key == "tau_init":
            return tuple(float(v) for v in value.split(",") if v.strip())
        kind = type(getattr(FitConfig(), key))
        if kind is bool:
            return _parse_bool(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from exc


def defaults_for(dims: int) -> FitConfig:
    """Defaults for a unit interval or unit square domain."""
    if dims == 1:
        return FitConfig()
    return FitConfig(
        domain=tuple((0.0, 1.0) for _ in range(dims)),
        inner_knots=(5,) * dims,
        tau_max=0.001,
        ridge=1e-5,
    )


def parse_config(text: str, base: FitConfig | None = None) -> FitConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = convert(key, value)
    if base is None:
        dims = len(values["domain"]) if "domain" in values else 1
        base = defaults_for(dims)
        if "domain" in values and "inner_knots" not in values:
            values["inner_knots"] = (5,) * dims
    return replace(base, **values)


def load_config(path: str | Path | None, overrides: dict | None = None) -> FitConfig:
    """Read a config file (or start from defaults) and apply overrides, then validate."""
    text = Path(path).read_text(encoding="utf-8") if path else ""
    cfg = parse_config(text)
    if overrides:
        vals = {k: convert(k, v) for k, v in overrides.items()}
        if "domain" in vals and "inner_knots" not in vals and len(vals["domain"]) != cfg.dims:
            vals["inner_knots"] = (5,) * len(vals["domain"])
        cfg = replace(cfg, **vals)
    return cfg.validate()
