"""Experiment configuration: TOML sections with typed keys.

Every key has a default; unknown sections or keys are rejected. A minimal
file only names what differs from the defaults::

    [problem]
    kind = "ray"

    [grid]
    nx = 32

    [eigen]
    k = 20
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


DEFAULTS: dict = {
    "problem": {"kind": "ray"},
    "grid": {"nx": 32, "ny": 0, "size": 1.0},
    "kernel": {"nu": 0.5, "theta": 1.0, "L": 0.25},
    "setup": {
        "n_sou": 5, "n_rec": 5, "source_span": [0.0, 1.0], "receiver_span": [0.0, 1.0],
        "points_file": "", "sources": [2, 4], "observations": [4, 4], "Q": 1.0,
        "margin": 0.2,
    },
    "truth": {"seed": 0, "mean": 0.0},
    "noise": {"fraction": 0.001, "seed": 1},
    "map": {"tol": 1e-7, "restart": 50, "maxiter": 5000, "max_gn": 20, "step_tol": 1e-3,
            "line_search": True},
    "eigen": {"k": 20, "p": 20, "seed": 0, "single_pass": False},
    "posterior": {"cutoff": 0.1},
    "criteria": {"enabled": True, "probes": 64, "seed": 0, "e_tol": 1e-8},
    "sweep": {"kind": "", "values": []},
    "run": {"out": "out", "workers": 1},
}

_DESIGN_KEYS = {"name"} | set(DEFAULTS["setup"])


@dataclass
class ExperimentConfig:
    """Resolved configuration; ``sections`` mirrors :data:`DEFAULTS`."""

    sections: dict
    designs: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.sections[key]

    @property
    def kind(self) -> str:
        return self.sections["problem"]["kind"]

    @property
    def nx(self) -> int:
        return self.sections["grid"]["nx"]

    @property
    def ny(self) -> int:
        return self.sections["grid"]["ny"] or self.sections["grid"]["nx"]

    @property
    def m(self) -> int:
        return self.nx * self.ny

    @property
    def n_measurements(self) -> int:
        s = self.sections["setup"]
        if self.kind == "ray":
            return s["n_sou"] * s["n_rec"]
        return int(s["sources"][0] * s["sources"][1] * s["observations"][0]
                   * s["observations"][1])

    def resolved(self) -> dict:
        out = copy.deepcopy(self.sections)
        out["grid"]["ny"] = self.ny
        if self.designs:
            out["designs"] = copy.deepcopy(self.designs)
        return out

    def hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, section: str, **values) -> ExperimentConfig:
        """Copy with some keys of one section changed (validated)."""
        raw = self.resolved()
        raw.setdefault(section, {}).update(values)
        return from_dict(raw)


def _check_type(section, key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:  # pragma: no cover
        ok = True
    if not ok:
        raise ConfigError(f"[{section}] {key}: expected {type(default).__name__}, "
                          f"got {type(value).__name__}")
    return value


def from_dict(raw: dict) -> ExperimentConfig:
    """Merge ``raw`` over the defaults and validate."""
    raw = copy.deepcopy(raw)
    designs = raw.pop("designs", [])
    sections = copy.deepcopy(DEFAULTS)
    for name, values in raw.items():
        if name not in DEFAULTS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            sections[name][key] = _check_type(name, key, value, DEFAULTS[name][key])
    if not isinstance(designs, list):
        raise ConfigError("designs must be an array of tables")
    for i, d in enumerate(designs):
        if not isinstance(d, dict):
            raise ConfigError(f"design {i} must be a table")
        unknown = set(d) - _DESIGN_KEYS
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in design {i}")
        for key, value in d.items():
            if key != "name":
                d[key] = _check_type("designs", key, value, DEFAULTS["setup"][key])
        d.setdefault("name", f"design{i}")
    cfg = ExperimentConfig(sections, designs)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_dict(raw)


def _span(name, span):
    if len(span) != 2 or not 0.0 <= span[0] < span[1] <= 1.0:
        raise ConfigError(f"{name} must be [lo, hi] with 0 <= lo < hi <= 1")


def validate(cfg: ExperimentConfig) -> None:
    s = cfg.sections
    if cfg.kind not in ("ray", "hydro"):
        raise ConfigError(f"problem kind must be 'ray' or 'hydro', got {cfg.kind!r}")
    if s["grid"]["nx"] < 1 or s["grid"]["ny"] < 0:
        raise ConfigError("grid sizes must be positive")
    if not s["grid"]["size"] > 0:
        raise ConfigError("grid size must be positive")
    for key in ("nu", "theta", "L"):
        if not s["kernel"][key] > 0:
            raise ConfigError(f"kernel {key} must be positive")
    st = s["setup"]
    if st["n_sou"] < 1 or st["n_rec"] < 1:
        raise ConfigError("need at least one source and one receiver")
    _span("source_span", st["source_span"])
    _span("receiver_span", st["receiver_span"])
    for key in ("sources", "observations"):
        if len(st[key]) != 2 or min(st[key]) < 1:
            raise ConfigError(f"setup {key} must be [count_x, count_y] with counts >= 1")
    if not s["noise"]["fraction"] > 0:
        raise ConfigError("noise fraction must be positive")
    e = s["eigen"]
    if e["k"] < 1 or e["p"] < 0:
        raise ConfigError("eigen k must be >= 1 and p >= 0")
    if e["k"] + e["p"] > cfg.m:
        raise ConfigError(f"k + p = {e['k'] + e['p']} exceeds the number of unknowns {cfg.m}")
    if s["posterior"]["cutoff"] < 0:
        raise ConfigError("cutoff must be nonnegative")
    if s["criteria"]["probes"] < 1:
        raise ConfigError("criteria probes must be >= 1")
    if s["map"]["restart"] < 1 or s["map"]["max_gn"] < 1 or not s["map"]["tol"] > 0:
        raise ConfigError("invalid MAP solver settings")
    if s["run"]["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    sweep = s["sweep"]
    if sweep["kind"] not in ("", "nu", "grid", "measurements"):
        raise ConfigError(f"unknown sweep kind {sweep['kind']!r}")
    for d in cfg.designs:
        _span(f"design {d['name']} source_span", d.get("source_span", st["source_span"]))
