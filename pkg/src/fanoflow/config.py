"""Run configuration: flat key-value files, validation, and problem setup."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .polytopes import PRESET_NAMES, preset
from .potentials import Grid, PotentialField

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


@dataclass
class RunConfig:
    preset: str = ""
    weights: str = "default"          # default | round | w1,w2,...
    resolution: int = 96              # x-grid nodes per axis
    half_width: float = 12.0          # log-coordinate box half width
    sigma: float = 0.2                # time-step safety factor
    t_end: float = 5.0
    snapshot_every: float = 0.25
    outdir: str = ""
    lambda1: bool = False
    legendre_check: bool = False
    dual_resolution: int = 0          # 0: follow resolution
    initial_phi: str = "zero"         # zero | file | bump
    initial_file: str = ""
    bump_amplitude: float = 0.1
    bump_width: float = 1.0

    def serialize(self) -> str:
        lines = []
        for f in self.__dataclass_fields__.values():
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


_RANGES = {
    "resolution": "even integer >= 32",
    "half_width": "real in [8, 20]",
    "sigma": "real in (0, 0.5]",
    "t_end": "positive real",
    "snapshot_every": "positive real <= t_end",
}


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.preset not in PRESET_NAMES:
        raise ConfigurationError(
            f"unknown preset {cfg.preset!r}; valid presets: "
            + ", ".join(PRESET_NAMES))
    if cfg.resolution < 32 or cfg.resolution % 2:
        raise ConfigurationError(f"resolution: need {_RANGES['resolution']}")
    if not 8.0 <= cfg.half_width <= 20.0:
        raise ConfigurationError(f"half_width: need {_RANGES['half_width']}")
    if not 0.0 < cfg.sigma <= 0.5:
        raise ConfigurationError(f"sigma: need {_RANGES['sigma']}")
    if cfg.t_end <= 0.0:
        raise ConfigurationError(f"t_end: need {_RANGES['t_end']}")
    if not 0.0 < cfg.snapshot_every <= cfg.t_end:
        raise ConfigurationError(
            f"snapshot_every: need {_RANGES['snapshot_every']}")
    if cfg.initial_phi not in ("zero", "file", "bump"):
        raise ConfigurationError("initial_phi must be zero, file, or bump")
    if cfg.initial_phi == "file" and not cfg.initial_file:
        raise ConfigurationError("initial_phi = file requires initial_file")
    if cfg.weights not in ("default", "round"):
        try:
            vals = [float(s) for s in cfg.weights.split(",")]
        except ValueError:
            raise ConfigurationError(
                "weights must be 'default', 'round', or a comma list of "
                "positive reals")
        if any(w <= 0.0 for w in vals):
            raise ConfigurationError("explicit weights must be positive")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines; `#` starts a comment; unknown keys rejected."""
    cfg = RunConfig()
    fields = cfg.__dataclass_fields__
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigurationError(
                f"line {lineno}: unknown key {key!r}; known keys: "
                + ", ".join(sorted(fields)))
        typ = fields[key].type
        try:
            if typ == "bool":
                if val.lower() not in _BOOL:
                    raise ValueError
                parsed = _BOOL[val.lower()]
            elif typ == "int":
                parsed = int(val)
            elif typ == "float":
                parsed = float(val)
            else:
                parsed = val
        except ValueError:
            raise ConfigurationError(
                f"line {lineno}: bad value {val!r} for {key}")
        setattr(cfg, key, parsed)
    if not cfg.preset:
        raise ConfigurationError(
            "config must name a preset; valid presets: "
            + ", ".join(PRESET_NAMES))
    return _validate(cfg)


def resolve_weights(cfg: RunConfig):
    if cfg.weights in ("default", "round"):
        return cfg.weights
    return np.array([float(s) for s in cfg.weights.split(",")])


def initial_field(cfg: RunConfig) -> PotentialField:
    p = preset(cfg.preset)
    grid = Grid(half_width=cfg.half_width, resolution=cfg.resolution)
    weights = resolve_weights(cfg)
    if cfg.initial_phi == "file":
        from .snapshot import read_snapshot
        field, _ = read_snapshot(cfg.initial_file)
        if field.preset.name != cfg.preset:
            raise ConfigurationError(
                f"initial file is a {field.preset.name} snapshot, "
                f"config says {cfg.preset}")
        return field
    field = PotentialField(p, grid, weights)
    if cfg.initial_phi == "bump":
        x, y = grid.meshgrid()
        r2 = (x * x + y * y) / (cfg.bump_width ** 2)
        field = field.with_phi(cfg.bump_amplitude * np.exp(-r2))
    return field


def build_problem(cfg: RunConfig):
    """(FlowProblem, t_end, snapshot_every) for a validated config."""
    from .flow import FlowProblem

    problem = FlowProblem(
        initial_field(cfg), sigma=cfg.sigma,
        dual_resolution=cfg.dual_resolution or None,
    )
    return problem, cfg.t_end, cfg.snapshot_every
