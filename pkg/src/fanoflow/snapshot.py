"""Snapshot persistence: exact text serialization of a potential state.

Format (version 1): a small key-value header followed by one hex float per
line for the reference weights and the phi field in row-major order.  Hex
floats round-trip bit-identically, so write(read(p)) reproduces the file.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigurationError, DomainError
from .polytopes import preset
from .potentials import Grid, PotentialField

MAGIC = "fanoflow-snapshot 1"


def snapshot_path(outdir, t: float) -> str:
    return os.path.join(str(outdir), f"snapshot_t{t:011.5f}.txt")


def write_snapshot(path, field: PotentialField, t: float) -> None:
    g = field.grid
    lines = [
        MAGIC,
        f"preset = {field.preset.name}",
        f"resolution = {g.resolution}",
        f"half_width = {float(g.half_width).hex()}",
        f"t = {float(t).hex()}",
        f"gauge = {float(field.gauge).hex()}",
        f"weights = {len(field.reference.weights)}",
    ]
    lines.extend(float(w).hex() for w in field.reference.weights)
    lines.append(f"phi = {field.phi.size}")
    lines.extend(float(x).hex() for x in field.phi.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple:
    """Returns (PotentialField, t)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != MAGIC:
        raise ConfigurationError(f"{path}: not a snapshot file")

    header = {}
    i = 1
    while "=" in lines[i]:
        key, val = (s.strip() for s in lines[i].split("=", 1))
        header[key] = val
        i += 1
        if key == "weights":
            n = int(val)
            header["weight_values"] = [float.fromhex(s) for s in lines[i:i + n]]
            i += n
        elif key == "phi":
            n = int(val)
            header["phi_values"] = [float.fromhex(s) for s in lines[i:i + n]]
            i += n
            break
    for key in ("preset", "resolution", "half_width", "t", "gauge",
                "weight_values", "phi_values"):
        if key not in header:
            raise ConfigurationError(f"{path}: missing snapshot field {key!r}")

    p = preset(header["preset"])
    grid = Grid(half_width=float.fromhex(header["half_width"]),
                resolution=int(header["resolution"]))
    phi = np.array(header["phi_values"]).reshape(grid.shape)
    weights = np.array(header["weight_values"])
    if len(weights) != len(p.polytope.lattice_points):
        raise DomainError(f"{path}: weight count does not match the preset")
    field = PotentialField(p, grid, weights, phi,
                           gauge=float.fromhex(header["gauge"]))
    return field, float.fromhex(header["t"])
