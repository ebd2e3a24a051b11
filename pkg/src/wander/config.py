"""Flat experiment configuration with dotted keys.

Files are TOML.  Keys may be written with sections (``[grid]`` then ``t = 20``)
or dotted (``grid.t = 20``); both flatten to ``"grid.t"``.  Unknown keys and
out-of-range values are rejected before any computation starts.
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernel import FAMILIES, CovKernel, make_kernel
from .gaussian_core import GridSpec

SUBCOMMANDS = (
    "kernel-check",
    "cov-table",
    "eta-stats",
    "girsanov-check",
    "free-energy",
    "regime-probe",
    "exponent-scan",
    "corollary73-scan",
)

# key -> default; the default's type is the accepted type
DEFAULTS: Dict[str, Any] = {
    "kernel.family": "cauchy_fast",
    "kernel.param": 1.0,
    "grid.t": 20.0,
    "grid.n_t": 20,
    "grid.alpha": 0.55,
    "grid.band_N": 16,
    "grid.beta": 1.0,
    "grid.master_seed": 0,
    "basis.target_err": 1e-3,
    "basis.max_modes": 400_000,
    "experiment.name": "",
    "experiment.t_grid": [10.0, 100.0],
    "experiment.beta_grid": [0.0, 0.5, 1.0],
    "experiment.lags": [0, 1, 2, 3, 5],
    "experiment.k_values": [1, 2],
    "experiment.n_fields": 100,
    "experiment.n_paths": 1000,
    "experiment.m": 4,
    "experiment.M": 16,
    "experiment.rho": 0.05,
    "experiment.q_0": 3,
    "experiment.epsilon": 0.01,
    "experiment.slow_param": 0.5,
    "experiment.delta_source": "discrete",
    "experiment.probes": ["prop71", "prop72", "lemma33"],
    "output.path": "results",
}

INT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, int) and not isinstance(v, bool)}
FLOAT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, float)}
INT_LIST_KEYS = {"experiment.lags", "experiment.k_values"}
FLOAT_LIST_KEYS = {"experiment.t_grid", "experiment.beta_grid"}
STR_LIST_KEYS = {"experiment.probes"}


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, val in tree.items():
        name = f"{prefix}{key}"
        if isinstance(val, Mapping):
            out.update(flatten(val, name + "."))
        else:
            out[name] = val
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with updated keys; use ``__`` for the dot (``grid__t=50``)."""
        vals = dict(self.values)
        for k, v in changes.items():
            vals[k.replace("__", ".")] = v
        return from_mapping(vals)

    def kernel(self) -> CovKernel:
        return make_kernel(self["kernel.family"], self["kernel.param"])

    def grid(self, **overrides) -> GridSpec:
        args = dict(
            t=self["grid.t"],
            n_t=self["grid.n_t"],
            alpha=self["grid.alpha"],
            band_N=self["grid.band_N"],
            beta=self["grid.beta"],
            master_seed=self["grid.master_seed"],
        )
        args.update(overrides)
        return GridSpec(**args)

    def dumps(self) -> str:
        return dumps(self.values)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def _coerce(key: str, val: Any) -> Any:
    if key in INT_KEYS:
        if isinstance(val, bool) or not isinstance(val, int):
            if isinstance(val, float) and val.is_integer():
                return int(val)
            raise ConfigError(f"{key} must be an integer, got {val!r}")
        return val
    if key in FLOAT_KEYS:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number, got {val!r}")
        return float(val)
    if key in FLOAT_LIST_KEYS | INT_LIST_KEYS | STR_LIST_KEYS:
        if not isinstance(val, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {val!r}")
        if key in FLOAT_LIST_KEYS:
            return [float(_coerce_num(key, x)) for x in val]
        if key in INT_LIST_KEYS:
            return [int(_coerce_num(key, x, integer=True)) for x in val]
        return [str(x) for x in val]
    if not isinstance(val, str):
        raise ConfigError(f"{key} must be a string, got {val!r}")
    return val


def _coerce_num(key, x, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{key} entries must be numbers, got {x!r}")
    if integer and not float(x).is_integer():
        raise ConfigError(f"{key} entries must be integers, got {x!r}")
    return x


def validate(vals: Mapping[str, Any]) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(vals["kernel.family"] in FAMILIES, f"kernel.family must be one of {FAMILIES}")
    need(vals["kernel.param"] > 0, "kernel.param must be positive")
    if vals["kernel.family"] == "cauchy_slow":
        need(vals["kernel.param"] <= 0.5, "cauchy_slow needs kernel.param in (0, 1/2]")
    need(vals["grid.t"] > 0, "grid.t must be positive")
    need(vals["grid.n_t"] >= 2 and vals["grid.n_t"] % 2 == 0, "grid.n_t must be even and >= 2")
    need(0.5 < vals["grid.alpha"] < 0.6, "grid.alpha must lie in (1/2, 3/5)")
    need(vals["grid.band_N"] >= 1, "grid.band_N must be >= 1")
    need(vals["grid.beta"] >= 0, "grid.beta must be >= 0")
    need(0 <= vals["grid.master_seed"] < 2**64, "grid.master_seed must fit in 64 bits")
    need(vals["basis.target_err"] > 0, "basis.target_err must be positive")
    need(vals["basis.max_modes"] >= 1, "basis.max_modes must be >= 1")
    t_grid = vals["experiment.t_grid"]
    need(len(t_grid) > 0, "experiment.t_grid must not be empty")
    need(all(t > 0 for t in t_grid), "experiment.t_grid entries must be positive")
    need(all(b >= 0 for b in vals["experiment.beta_grid"]), "experiment.beta_grid entries must be >= 0")
    need(len(vals["experiment.beta_grid"]) > 0, "experiment.beta_grid must not be empty")
    need(all(d >= 0 for d in vals["experiment.lags"]), "experiment.lags must be >= 0")
    need(vals["experiment.n_fields"] >= 1, "experiment.n_fields must be >= 1")
    need(vals["experiment.n_paths"] >= 10, "experiment.n_paths must be >= 10")
    need(vals["experiment.m"] >= 2, "experiment.m must be >= 2")
    need(vals["experiment.M"] > vals["experiment.m"], "experiment.M must exceed experiment.m")
    need(vals["experiment.rho"] > 0, "experiment.rho must be positive")
    need(vals["experiment.q_0"] >= 1, "experiment.q_0 must be >= 1")
    need(0 < vals["experiment.slow_param"] <= 0.5, "experiment.slow_param must lie in (0, 1/2]")
    need(vals["experiment.delta_source"] in ("analytic", "discrete"), "experiment.delta_source must be analytic or discrete")
    bad = set(vals["experiment.probes"]) - {"prop71", "prop72", "lemma33"}
    need(not bad, f"unknown probes {sorted(bad)}")


def from_mapping(raw: Mapping[str, Any]) -> ExperimentConfig:
    flat = flatten(raw)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    vals = dict(DEFAULTS)
    for key, val in flat.items():
        vals[key] = _coerce(key, val)
    validate(vals)
    return ExperimentConfig(vals)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_mapping(raw)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def _fmt(val: Any) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, int):
        return str(val)
    if isinstance(val, float):
        if math.isinf(val) or math.isnan(val):
            raise ConfigError("non-finite values cannot be serialized")
        return repr(val)
    if isinstance(val, str):
        return '"' + val.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in val) + "]"
    raise ConfigError(f"cannot serialize {val!r}")


def dumps(values: Mapping[str, Any]) -> str:
    """Sectioned TOML with keys in sorted order; ``loads(dumps(v))`` returns ``v``."""
    sections: Dict[str, Dict[str, Any]] = {}
    for key in sorted(values):
        sec, name = key.split(".", 1)
        sections.setdefault(sec, {})[name] = values[key]
    lines = []
    for sec, body in sections.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{name} = {_fmt(val)}" for name, val in body.items())
        lines.append("")
    return "\n".join(lines)
