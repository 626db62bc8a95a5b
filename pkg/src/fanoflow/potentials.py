"""Torus-invariant Kahler potentials in logarithmic coordinates.

The active potential is F = F0 + phi, with F0 the lattice log-sum-exp
reference of a Fano preset (all derivatives in closed form, as cumulants
of the induced distribution on lattice points) and phi a grid field whose
derivatives come from the high-order stencils.  Keeping the reference
analytic means a state with phi = 0 carries no finite-difference error
at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import stencils
from .errors import ConfigurationError, DomainError
from .polytopes import FanoPreset, preset as load_preset


@dataclass(frozen=True)
class Grid:
    """Uniform box [-L, L]^2 with N cells (N + 1 nodes) per axis."""

    half_width: float
    resolution: int

    def __post_init__(self):
        if self.resolution < 32 or self.resolution % 2:
            raise ConfigurationError("grid resolution must be an even integer >= 32")
        if self.half_width <= 0:
            raise ConfigurationError("grid half width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.resolution

    @property
    def axis(self) -> np.ndarray:
        n = self.resolution + 1
        return np.linspace(-self.half_width, self.half_width, n)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.axis
        return np.meshgrid(x, x, indexing="ij")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.resolution + 1, self.resolution + 1)


def reference_weights(p: FanoPreset, selector="default") -> np.ndarray:
    """Weight per lattice point of the preset polygon.

    ``default`` is all ones.  ``round`` gives the closed-form homogeneous
    metrics where one exists: multinomial weights on cp2 (Fubini-Study) and
    binomial product weights on p1xp1 (round product of unit spheres).
    A sequence of positive reals is accepted verbatim.
    """
    pts = p.polytope.lattice_points
    if isinstance(selector, str):
        if selector == "default":
            return np.ones(len(pts))
        if selector == "round":
            if p.name == "p1xp1":
                b = {-1: 1.0, 0: 2.0, 1: 1.0}
                return np.array([b[a] * b[c] for a, c in pts])
            if p.name == "cp2":
                w = []
                for a, c in pts:
                    i, j = a + 1, c + 1
                    w.append(math.factorial(3) / (math.factorial(i) * math.factorial(j) * math.factorial(3 - i - j)))
                return np.array(w)
            raise ConfigurationError(
                f"no round weight table for preset {p.name!r} (only cp2, p1xp1)"
            )
        raise ConfigurationError(f"unknown weight selector {selector!r}")
    w = np.asarray(selector, dtype=float)
    if w.shape != (len(pts),):
        raise ConfigurationError(
            f"weight table needs {len(pts)} entries for preset {p.name!r}, got {w.shape}"
        )
    if np.any(w <= 0):
        raise DomainError("reference potential weights must be strictly positive")
    return w


class ReferencePotential:
    """F0(x) = log sum_lambda w_lambda exp(<lambda, x>) over lattice points of P."""

    def __init__(self, p: FanoPreset, weights="default"):
        self.preset = p
        self.weights = reference_weights(p, weights)
        self.lattice = np.array(p.polytope.lattice_points, dtype=float)  # (K, 2)
        self._logw = np.log(self.weights)

    def _softmax(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (log-sum-exp value, probabilities) at points x of shape (..., 2)."""
        logits = x @ self.lattice.T + self._logw  # (..., K)
        m = np.max(logits, axis=-1, keepdims=True)
        e = np.exp(logits - m)
        s = np.sum(e, axis=-1, keepdims=True)
        value = (m + np.log(s))[..., 0]
        return value, e / s

    def value(self, x: np.ndarray) -> np.ndarray:
        return self._softmax(np.asarray(x, dtype=float))[0]

    def derivative_tables(self, x: np.ndarray) -> dict:
        """Value and all partial derivatives up to fourth order at points x.

        F0 is the cumulant generating function of the weighted lattice
        distribution, so the derivative tensors are its cumulants.
        Returned arrays have index axes first: d2 has shape (2, 2, ...).
        """
        x = np.asarray(x, dtype=float)
        value, prob = self._softmax(x)
        lam = self.lattice  # (K, 2)
        mu = np.einsum("...k,ka->a...", prob, lam)
        # centered lattice coordinates, shape (..., K, 2)
        cen = lam - np.moveaxis(mu, 0, -1)[..., None, :]
        m2 = np.einsum("...k,...ka,...kb->ab...", prob, cen, cen)
        m3 = np.einsum("...k,...ka,...kb,...kc->abc...", prob, cen, cen, cen)
        m4 = np.einsum("...k,...ka,...kb,...kc,...kd->abcd...", prob, cen, cen, cen, cen)
        k4 = (
            m4
            - np.einsum("ab...,cd...->abcd...", m2, m2)
            - np.einsum("ac...,bd...->abcd...", m2, m2)
            - np.einsum("ad...,bc...->abcd...", m2, m2)
        )
        return {"value": value, "d1": mu, "d2": m2, "d3": m3, "d4": k4}


@dataclass
class PotentialTables:
    """Derivative arrays of a potential F on a grid, up to fourth order.

    d1 has shape (2, n, n), d2 (2, 2, n, n), and so on; all tensors are
    symmetric in their index axes.
    """

    grid: Grid
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray) -> "PotentialTables":
        """Pure finite-difference tables from point values (generic FD pipeline)."""
        return cls(grid=grid, value=np.asarray(values, dtype=float), **_fd_tables(grid, values))

    @classmethod
    def from_reference_and_phi(
        cls, ref: ReferencePotential, grid: Grid, phi: np.ndarray
    ) -> "PotentialTables":
        """Analytic reference derivatives plus finite differences of phi only."""
        x = np.stack(grid.meshgrid(), axis=-1)
        base = ref.derivative_tables(x)
        if np.any(phi):
            fd = _fd_tables(grid, phi)
            return cls(
                grid=grid,
                value=base["value"] + phi,
                d1=base["d1"] + fd["d1"],
                d2=base["d2"] + fd["d2"],
                d3=base["d3"] + fd["d3"],
                d4=base["d4"] + fd["d4"],
            )
        zeros = lambda k: np.zeros((2,) * k + grid.shape)
        return cls(grid=grid, value=base["value"].copy(), d1=base["d1"],
                   d2=base["d2"], d3=base["d3"], d4=base["d4"])

    @classmethod
    def from_quadratic(cls, grid: Grid, hessian=((1.0, 0.0), (0.0, 1.0))) -> "PotentialTables":
        """Tables of F = x^T H x / 2 (flat test model, ignores any polytope)."""
        X, Y = grid.meshgrid()
        H = np.asarray(hessian, dtype=float)
        value = 0.5 * (H[0, 0] * X * X + 2 * H[0, 1] * X * Y + H[1, 1] * Y * Y)
        d1 = np.einsum("ab,b...->a...", H, np.stack([X, Y]))
        d2 = np.broadcast_to(H[:, :, None, None], (2, 2) + grid.shape).copy()
        return cls(grid=grid, value=value, d1=d1, d2=d2,
                   d3=np.zeros((2, 2, 2) + grid.shape),
                   d4=np.zeros((2, 2, 2, 2) + grid.shape))

    def scaled(self, c: float) -> "PotentialTables":
        """Tables of c * F (metric scaling g -> c g)."""
        return PotentialTables(grid=self.grid, value=c * self.value, d1=c * self.d1,
                               d2=c * self.d2, d3=c * self.d3, d4=c * self.d4)


def _fd_tables(grid: Grid, values: np.ndarray) -> dict:
    h = grid.spacing
    shape = grid.shape
    values = np.asarray(values, dtype=float)
    if values.shape != shape:
        raise DomainError(f"field shape {values.shape} does not match grid {shape}")
    d = {}
    for total in range(1, 5):
        t = np.zeros((2,) * total + shape)
        for idx in np.ndindex(*(2,) * total):
            a = total - sum(idx)
            b = sum(idx)
            t[idx] = stencils.partial_derivative(values, h, a, b)
        d[f"d{total}"] = t
    return d


class PotentialField:
    """Grid potential F = F0 + phi for a preset, with a gauge constant record.

    The gauge constant tracks the spatially constant part of the evolving
    potential separately; no metric quantity depends on it, and keeping it
    out of the stored field avoids catastrophic cancellation once the flow's
    unstable constant mode has grown large.
    """

    def __init__(self, p: FanoPreset, grid: Grid, weights="default",
                 phi: Optional[np.ndarray] = None, gauge: float = 0.0):
        self.preset = p
        self.grid = grid
        self.reference = ReferencePotential(p, weights)
        self.phi = np.zeros(grid.shape) if phi is None else np.array(phi, dtype=float)
        if self.phi.shape != grid.shape:
            raise DomainError("phi shape does not match grid")
        self.gauge = float(gauge)
        self._tables = None
        self._spline = None

    @property
    def weights(self) -> np.ndarray:
        return self.reference.weights

    def tables(self) -> PotentialTables:
        if self._tables is None:
            self._tables = PotentialTables.from_reference_and_phi(
                self.reference, self.grid, self.phi
            )
        return self._tables

    def with_phi(self, phi: np.ndarray, gauge: Optional[float] = None) -> "PotentialField":
        return PotentialField(self.preset, self.grid, self.reference.weights, phi,
                              self.gauge if gauge is None else gauge)

    def _phi_spline(self) -> RectBivariateSpline:
        if self._spline is None:
            ax = self.grid.axis
            self._spline = RectBivariateSpline(ax, ax, self.phi, kx=5, ky=5)
        return self._spline

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        """grad F at arbitrary points (..., 2); phi contributes via a quintic spline."""
        pts = np.asarray(points, dtype=float)
        g = self.reference.derivative_tables(pts)["d1"]  # (2, ...)
        if np.any(self.phi):
            s = self._phi_spline()
            flat = pts.reshape(-1, 2)
            g = g.copy()
            g[0] += s(flat[:, 0], flat[:, 1], dx=1, grid=False).reshape(pts.shape[:-1])
            g[1] += s(flat[:, 0], flat[:, 1], dy=1, grid=False).reshape(pts.shape[:-1])
        return np.moveaxis(g, 0, -1)

    def derivatives_at(self, points: np.ndarray, max_order: int = 2) -> dict:
        """Derivative tensors of F at arbitrary points, up to max_order <= 4."""
        pts = np.asarray(points, dtype=float)
        out = self.reference.derivative_tables(pts)
        if np.any(self.phi):
            s = self._phi_spline()
            flat = pts.reshape(-1, 2)
            lead = pts.shape[:-1]
            for total in range(1, max_order + 1):
                t = out[f"d{total}"]
                for idx in np.ndindex(*(2,) * total):
                    a, b = total - sum(idx), sum(idx)
                    t[idx] = t[idx] + s(flat[:, 0], flat[:, 1], dx=a, dy=b,
                                        grid=False).reshape(lead)
        return out


def round_product_field(grid: Grid) -> PotentialField:
    """p1xp1 with binomial weights: the round product of unit 2-spheres."""
    return PotentialField(load_preset("p1xp1"), grid, weights="round")
