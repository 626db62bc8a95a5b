"""Moment polygons, intersection forms and lattice searches for the five toric Fano surfaces.

All polygon arithmetic here is exact (integers and ``fractions.Fraction``);
floating point only enters once potentials are evaluated elsewhere.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

import numpy as np

from .errors import ConfigurationError, DomainError

PRESET_NAMES = ("cp2", "p1xp1", "bl1", "bl2", "bl3")

# Counterclockwise vertex lists of the anticanonical moment polygons.
_VERTICES = {
    "cp2": ((-1, -1), (2, -1), (-1, 2)),
    "p1xp1": ((1, 1), (-1, 1), (-1, -1), (1, -1)),
    "bl1": ((-1, -1), (2, -1), (0, 1), (-1, 1)),
    "bl2": ((0, -1), (2, -1), (0, 1), (-1, 1), (-1, 0)),
    "bl3": ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)),
}

_C1_SQUARED = {"cp2": 9, "p1xp1": 8, "bl1": 8, "bl2": 7, "bl3": 6}

_INTERSECTION_FORMS = {
    "cp2": ([[1]], ("H",)),
    "p1xp1": ([[0, 1], [1, 0]], ("F1", "F2")),
    "bl1": ([[1, 0], [0, -1]], ("H", "E1")),
    "bl2": ([[1, 0, 0], [0, -1, 0], [0, 0, -1]], ("H", "E1", "E2")),
    "bl3": (
        [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]],
        ("H", "E1", "E2", "E3"),
    ),
}

_FUTAKI_ZERO = {"cp2": True, "p1xp1": True, "bl1": False, "bl2": False, "bl3": True}


@dataclass(frozen=True)
class Edge:
    """One polygon edge: its vertex pair, primitive outward normal, lattice length."""

    start: tuple[int, int]
    end: tuple[int, int]
    normal: tuple[int, int]
    lattice_length: int


@dataclass(frozen=True)
class Polytope:
    vertices: tuple[tuple[int, int], ...]
    edges: tuple[Edge, ...]
    lattice_points: tuple[tuple[int, int], ...]

    def area(self) -> Fraction:
        """Shoelace area, exact."""
        v = self.vertices
        twice = sum(
            v[i][0] * v[(i + 1) % len(v)][1] - v[(i + 1) % len(v)][0] * v[i][1]
            for i in range(len(v))
        )
        return Fraction(twice, 2)

    def is_delzant(self) -> bool:
        """Primitive edge directions at every vertex form a unimodular basis."""
        n = len(self.vertices)
        for i in range(n):
            d_in = _primitive(_sub(self.vertices[i], self.vertices[(i - 1) % n]))
            d_out = _primitive(_sub(self.vertices[(i + 1) % n], self.vertices[i]))
            if abs(d_in[0] * d_out[1] - d_in[1] * d_out[0]) != 1:
                return False
        return True

    def is_reflexive(self) -> bool:
        """Every supporting edge line is at lattice distance 1 from the origin."""
        return all(
            e.start[0] * e.normal[0] + e.start[1] * e.normal[1] == 1
            and e.end[0] * e.normal[0] + e.end[1] * e.normal[1] == 1
            for e in self.edges
        )

    def contains(self, point: tuple[int, int]) -> bool:
        return all(
            point[0] * e.normal[0] + point[1] * e.normal[1] <= 1 for e in self.edges
        )


@dataclass(frozen=True)
class IntersectionForm:
    matrix: tuple[tuple[int, ...], ...]
    basis_labels: tuple[str, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=np.int64)

    @property
    def rank(self) -> int:
        return len(self.matrix)


@dataclass(frozen=True)
class FanoPreset:
    name: str
    polytope: Polytope
    intersection_form: IntersectionForm
    c1_squared: int
    futaki_expected_zero: bool


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1])


def _primitive(v):
    g = math.gcd(abs(v[0]), abs(v[1]))
    return (v[0] // g, v[1] // g)


def _build_polytope(vertices) -> Polytope:
    n = len(vertices)
    edges = []
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        d = _sub(b, a)
        length = math.gcd(abs(d[0]), abs(d[1]))
        dp = (d[0] // length, d[1] // length)
        # Outward normal for a counterclockwise polygon with 0 in the interior.
        normal = (dp[1], -dp[0])
        if a[0] * normal[0] + a[1] * normal[1] < 0:
            normal = (-normal[0], -normal[1])
        edges.append(Edge(start=a, end=b, normal=normal, lattice_length=length))
    xs = [v[0] for v in vertices]
    ys = [v[1] for v in vertices]
    pts = []
    for x in range(min(xs), max(xs) + 1):
        for y in range(min(ys), max(ys) + 1):
            if all(x * e.normal[0] + y * e.normal[1] <= 1 for e in edges):
                pts.append((x, y))
    return Polytope(
        vertices=tuple(vertices), edges=tuple(edges), lattice_points=tuple(pts)
    )


def preset(name: str) -> FanoPreset:
    """Catalog entry for one of the five toric Fano surfaces.

    Raises ConfigurationError for anything outside {cp2, p1xp1, bl1, bl2, bl3}.
    """
    if name not in PRESET_NAMES:
        raise ConfigurationError(
            f"unknown preset {name!r}; valid presets are {', '.join(PRESET_NAMES)}"
        )
    poly = _build_polytope(_VERTICES[name])
    matrix, labels = _INTERSECTION_FORMS[name]
    form = IntersectionForm(
        matrix=tuple(tuple(row) for row in matrix), basis_labels=labels
    )
    p = FanoPreset(
        name=name,
        polytope=poly,
        intersection_form=form,
        c1_squared=_C1_SQUARED[name],
        futaki_expected_zero=_FUTAKI_ZERO[name],
    )
    _validate(p)
    return p


def _validate(p: FanoPreset) -> None:
    poly = p.polytope
    if not poly.is_delzant():
        raise DomainError(f"preset {p.name}: polygon is not Delzant")
    if not poly.is_reflexive():
        raise DomainError(f"preset {p.name}: polygon is not reflexive")
    if poly.area() != Fraction(p.c1_squared, 2):
        raise DomainError(
            f"preset {p.name}: area {poly.area()} != c1^2/2 = {p.c1_squared}/2"
        )
    q = p.intersection_form.as_array()
    if abs(round(float(np.linalg.det(q)))) != 1:
        raise DomainError(f"preset {p.name}: intersection form is not unimodular")
    eigs = np.linalg.eigvalsh(q.astype(float))
    if int(np.sum(eigs > 0)) != 1 or int(np.sum(eigs < 0)) != q.shape[0] - 1:
        raise DomainError(f"preset {p.name}: signature must be (1, b2-1)")


def divisor_targets(p: FanoPreset) -> dict[Edge, float]:
    """Target symplectic area of each toric divisor: 2*pi times the edge lattice length.

    The class of the evolving form is fixed, so these are conserved targets for
    the measured divisor areas.
    """
    return {e: 2.0 * math.pi * e.lattice_length for e in p.polytope.edges}


def minus_two_class_search(form: IntersectionForm, bound: int):
    """Search for an integer vector v with v^T Q v = -2 and |v|_inf <= bound.

    Returns the first vector found when enumerating sup-norm shells outward,
    or None after exhausting the search box.
    """
    if bound < 1:
        raise DomainError("bound must be >= 1")
    q = form.as_array()
    if not np.array_equal(q, q.T):
        raise DomainError("intersection form matrix must be symmetric")
    k = q.shape[0]
    for shell in range(1, bound + 1):
        rng = range(-shell, shell + 1)
        for v in itertools.product(rng, repeat=k):
            if max(abs(c) for c in v) != shell:
                continue
            vec = np.array(v, dtype=np.int64)
            if int(vec @ q @ vec) == -2:
                return tuple(int(c) for c in vec)
    return None


def catalog() -> dict:
    """The full preset catalog as plain JSON-serializable data."""
    out = {}
    for name in PRESET_NAMES:
        p = preset(name)
        out[name] = {
            "vertices": [list(v) for v in p.polytope.vertices],
            "edges": [
                {
                    "start": list(e.start),
                    "end": list(e.end),
                    "normal": list(e.normal),
                    "lattice_length": e.lattice_length,
                }
                for e in p.polytope.edges
            ],
            "lattice_points": [list(v) for v in p.polytope.lattice_points],
            "intersection_form": {
                "matrix": [list(row) for row in p.intersection_form.matrix],
                "basis_labels": list(p.intersection_form.basis_labels),
            },
            "c1_squared": p.c1_squared,
            "futaki_expected_zero": p.futaki_expected_zero,
        }
    return out


def shipped_catalog() -> dict:
    """Catalog as shipped in the package data file (for diffing against catalog())."""
    text = resources.files("fanoflow").joinpath("data/presets.json").read_text()
    return json.loads(text)
