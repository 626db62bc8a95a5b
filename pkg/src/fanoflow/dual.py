"""Legendre-dual state of the flow: symplectic potential on the moment polygon.

Integrating the potential flow directly in log coordinates is hopeless at
useful resolutions: the Hessian of F degenerates like exp(-height) toward
the polygon's edge fans, so a consistent stencil there would need spacings
with h^4 ~ exp(-L).  The Legendre transform moves the problem onto the
moment polygon, where the flow of u (the symplectic potential, dual to F)
reads u_t = log det Hess u - <mu, grad u> + u + kappa0.  Writing u = u0 + v
with u0 dual to the analytic reference F0 and subtracting the same identity
for u0 leaves

    v_t = log det(I + F0''(x0(mu)) Hess v) - <mu, grad v> + v + h0(x0(mu))

where x0(mu) inverts grad F0.  Every coefficient is bounded on the closed
polygon (F0'' vanishes linearly at the boundary, which is the usual toric
degeneracy and needs no boundary condition), the Kahler class is pinned by
the fixed domain, and the automorphism drift of the log-coordinate
normalization turns into neutral affine gauge modes of v.  This module
holds the polygon grid, its finite-difference operators, the analytic
reference data, the dual-picture curvature, and the transforms between the
two coordinate systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.sparse import csr_matrix

from . import stencils
from .errors import ConfigurationError, DegenerateMetricError, NumericError
from .polytopes import FanoPreset
from .potentials import PotentialField, ReferencePotential

# Nodes closer to an edge than this fraction of the spacing are dropped:
# the node set stays strictly inside the polygon and every analytic
# reference quantity remains finite.
BOUNDARY_MARGIN = 0.35

_NEWTON_TOL = 1e-12
_NEWTON_CAP = 1.5  # largest coordinate step per Newton iteration


@dataclass
class MomentGrid:
    """Uniform grid restricted to the interior of a moment polygon.

    Nodes are cell centers of a bounding-box lattice, kept when they clear
    every edge by BOUNDARY_MARGIN * spacing.  Short grid-line runs (< 3
    nodes, at acute corners) are pruned so that one-dimensional stencils
    exist along both axes at every node.
    """

    preset: FanoPreset
    resolution: int
    spacing: float
    mu: np.ndarray       # (n, 2) node coordinates
    box_ij: np.ndarray   # (n, 2) integer indices into the bounding lattice
    box_shape: tuple[int, int]
    box_origin: tuple[float, float]
    index: np.ndarray    # (nx, ny) node number or -1
    d1: tuple            # sparse d/dmu_1, d/dmu_2
    d2: tuple            # sparse d2/dmu_1^2, d2/dmu_1 dmu_2, d2/dmu_2^2
    quad_weights: np.ndarray  # (n,) cell areas clipped to the polygon

    @property
    def node_count(self) -> int:
        return len(self.mu)

    @property
    def area(self) -> float:
        return float(np.sum(self.quad_weights))

    def polygon_integral(self, field: np.ndarray) -> float:
        """int field dmu over the polygon, exact-area node quadrature."""
        return float(np.dot(self.quad_weights, field))

    def polygon_mean(self, field: np.ndarray) -> float:
        return self.polygon_integral(field) / self.area

    def edge_distances(self) -> np.ndarray:
        """(n_edges, n) array of lattice distances 1 - <normal, mu>."""
        normals = np.array([e.normal for e in self.preset.polytope.edges], float)
        return 1.0 - normals @ self.mu.T

    def gradient(self, field: np.ndarray) -> np.ndarray:
        return np.stack([self.d1[0] @ field, self.d1[1] @ field])

    def hessian(self, field: np.ndarray) -> np.ndarray:
        out = np.empty((2, 2, self.node_count))
        out[0, 0] = self.d2[0] @ field
        out[0, 1] = out[1, 0] = self.d2[1] @ field
        out[1, 1] = self.d2[2] @ field
        return out

    def box_field(self, values: np.ndarray, pad: int = 4) -> np.ndarray:
        """Embed node values in a padded bounding-box array.

        Cells that are not nodes (outside the polygon, or beyond it in the
        padding ring) get a second-order Taylor continuation from their
        nearest node, with the displacement capped at a few spacings.
        Splines built on the padded box then cover the closed polygon with
        smooth values; this matters because the spline machinery clamps
        evaluation points to its knot rectangle, and the Legendre maximum of
        near-fan points lands within a fraction of a spacing of the
        boundary — past the outermost node line.
        """
        from scipy.ndimage import distance_transform_edt

        shape = (self.box_shape[0] + 2 * pad, self.box_shape[1] + 2 * pad)
        arr = np.full(shape, np.nan)
        arr[self.box_ij[:, 0] + pad, self.box_ij[:, 1] + pad] = values
        outside = np.isnan(arr)
        _, (ni, nj) = distance_transform_edt(outside, return_indices=True)
        src = self.index[ni[outside] - pad, nj[outside] - pad]
        gi, gj = np.nonzero(outside)
        delta = np.stack([gi - pad - self.box_ij[src, 0],
                          gj - pad - self.box_ij[src, 1]], axis=-1) * self.spacing
        norm = np.linalg.norm(delta, axis=-1)
        cap = (3.0 + pad) * 1.5 * self.spacing
        delta *= np.minimum(1.0, cap / np.maximum(norm, 1e-30))[:, None]
        grad = self.gradient(values)
        hess = self.hessian(values)
        arr[outside] = (
            values[src]
            + delta[:, 0] * grad[0, src] + delta[:, 1] * grad[1, src]
            + 0.5 * (delta[:, 0] ** 2 * hess[0, 0, src]
                     + 2.0 * delta[:, 0] * delta[:, 1] * hess[0, 1, src]
                     + delta[:, 1] ** 2 * hess[1, 1, src])
        )
        return arr

    def spline(self, values: np.ndarray, pad: int = 4,
               smooth: bool = True) -> RectBivariateSpline:
        """Bicubic spline over the padded box.

        With smooth=True a single binomial pass damps the grid-frequency
        component of the data first.  Near staircase boundaries the node
        values carry O(h^2)-level discretization noise that a cubic spline
        amplifies to order-one second derivatives, which defeats Newton
        solves through the spline; the filter changes smooth fields only at
        O(h^2 Hess), below the interpolation error budget.
        """
        from scipy.ndimage import convolve1d

        ox, oy = self.box_origin
        h = self.spacing
        ax0 = ox + h * (np.arange(self.box_shape[0] + 2 * pad) - pad)
        ax1 = oy + h * (np.arange(self.box_shape[1] + 2 * pad) - pad)
        box = self.box_field(values, pad)
        if smooth:
            kernel = np.array([0.25, 0.5, 0.25])
            box = convolve1d(convolve1d(box, kernel, axis=0, mode="nearest"),
                             kernel, axis=1, mode="nearest")
        return RectBivariateSpline(ax0, ax1, box, kx=3, ky=3)


def _runs(box_ij: np.ndarray, axis: int):
    """Maximal runs of consecutive nodes along a grid axis.

    Yields arrays of node numbers ordered by the running coordinate.
    """
    other = 1 - axis
    order = np.lexsort((box_ij[:, axis], box_ij[:, other]))
    line = box_ij[order, other]
    pos = box_ij[order, axis]
    breaks = np.flatnonzero((np.diff(line) != 0) | (np.diff(pos) != 1)) + 1
    return [seg for seg in np.split(order, breaks)]


def _axis_operator(box_ij: np.ndarray, axis: int, spacing: float, order: int, n: int):
    rows, cols, vals = [], [], []
    for run in _runs(box_ij, axis):
        m = len(run)
        w = min(5, m)
        offsets = np.arange(w, dtype=float)
        for p in range(m):
            lo = min(max(p - 2, 0), m - w)
            wts = stencils.fornberg_weights(float(p - lo), offsets, order)
            rows.extend([run[p]] * w)
            cols.extend(run[lo : lo + w])
            vals.append(wts)
    vals = np.concatenate(vals) / spacing**order
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def _clip_area(corners: np.ndarray, normals: np.ndarray) -> float:
    """Area of a convex cell clipped to the half-planes <n, mu> <= 1.

    Sutherland-Hodgman against each polygon edge, then the shoelace formula.
    """
    poly = [c for c in corners]
    for nrm in normals:
        if not poly:
            return 0.0
        out = []
        vals = [1.0 - float(nrm @ p) for p in poly]
        for i, p in enumerate(poly):
            j = (i + 1) % len(poly)
            q = poly[j]
            vi, vj = vals[i], vals[j]
            if vi >= 0.0:
                out.append(p)
            if (vi >= 0.0) != (vj >= 0.0):
                out.append(p + (q - p) * (vi / (vi - vj)))
        poly = out
    if len(poly) < 3:
        return 0.0
    pts = np.array(poly)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _quadrature_weights(box_shape, box_ij, index, lo, h, normals) -> np.ndarray:
    """Per-node weights summing exactly to the polygon area.

    Every bounding-box cell is clipped to the polygon; its clipped area goes
    to the nearest node.  Interior cells keep the plain h^2, so only the
    O(perimeter/h) boundary cells need the exact clip, and node values stand
    in for strip averages at one cell's distance -- the quadrature error
    drops from O(h) (dropped strip) to O(h^2).
    """
    from scipy.ndimage import distance_transform_edt

    nx, ny = box_shape
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    cx = lo[0] + (ii + 0.5) * h
    cy = lo[1] + (jj + 0.5) * h
    ell = 1.0 - (normals[:, 0, None, None] * cx + normals[:, 1, None, None] * cy)
    slack = 0.71 * h * np.linalg.norm(normals, axis=1)  # half cell diagonal
    inside = np.all(ell >= slack[:, None, None], axis=0)
    empty = np.any(ell < -slack[:, None, None], axis=0)
    _, (ni, nj) = distance_transform_edt(index < 0, return_indices=True)
    owner = np.where(index >= 0, index, index[ni, nj])
    weights = np.zeros(int(index.max()) + 1)
    np.add.at(weights, owner[inside], h * h)
    corners = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]) * h
    for a, b in zip(*np.nonzero(~inside & ~empty)):
        c = np.array([cx[a, b], cy[a, b]])
        area = _clip_area(c + corners, normals)
        if area > 0.0:
            weights[owner[a, b]] += area
    return weights


def build_moment_grid(preset: FanoPreset, resolution: int) -> MomentGrid:
    """Interior grid of the preset's moment polygon with derivative operators."""
    if resolution < 16:
        raise ConfigurationError("moment grid resolution must be at least 16")
    verts = np.array(preset.polytope.vertices, dtype=float)
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    h = float(np.max(hi - lo)) / resolution
    nx = int(math.ceil((hi[0] - lo[0]) / h))
    ny = int(math.ceil((hi[1] - lo[1]) / h))
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    mu = np.stack([lo[0] + (ii + 0.5) * h, lo[1] + (jj + 0.5) * h], axis=-1)

    normals = np.array([e.normal for e in preset.polytope.edges], dtype=float)
    margins = BOUNDARY_MARGIN * h * np.linalg.norm(normals, axis=1)
    ell = 1.0 - np.einsum("ea,ija->eij", normals, mu)
    keep = np.all(ell >= margins[:, None, None], axis=0)

    box_ij = np.stack([ii[keep], jj[keep]], axis=-1)
    # prune nodes whose grid-line runs are too short for a width-3 stencil
    while True:
        bad = np.zeros(len(box_ij), dtype=bool)
        for axis in (0, 1):
            for run in _runs(box_ij, axis):
                if len(run) < 3:
                    bad[run] = True
        if not bad.any():
            break
        box_ij = box_ij[~bad]
    if len(box_ij) < 16:
        raise ConfigurationError("moment grid came out degenerate; raise the resolution")

    n = len(box_ij)
    mu_nodes = np.stack(
        [lo[0] + (box_ij[:, 0] + 0.5) * h, lo[1] + (box_ij[:, 1] + 0.5) * h], axis=-1
    )
    index = np.full((nx, ny), -1, dtype=np.int64)
    index[box_ij[:, 0], box_ij[:, 1]] = np.arange(n)

    d1 = tuple(_axis_operator(box_ij, ax, h, 1, n) for ax in (0, 1))
    d2_xx = _axis_operator(box_ij, 0, h, 2, n)
    d2_yy = _axis_operator(box_ij, 1, h, 2, n)
    d2_xy = (d1[0] @ d1[1]).tocsr()
    weights = _quadrature_weights((nx, ny), box_ij, index, lo, h, normals)
    return MomentGrid(
        preset=preset, resolution=resolution, spacing=h, mu=mu_nodes,
        box_ij=box_ij, box_shape=(nx, ny), box_origin=(lo[0] + 0.5 * h, lo[1] + 0.5 * h),
        index=index, d1=d1, d2=(d2_xx, d2_xy, d2_yy), quad_weights=weights,
    )


def _solve2(a: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Batched solve of 2x2 systems a (2,2,n) x = r (2,n)."""
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return np.stack(
        [(a[1, 1] * r[0] - a[0, 1] * r[1]) / det,
         (a[0, 0] * r[1] - a[1, 0] * r[0]) / det]
    )


def invert_reference_gradient(ref: ReferencePotential, targets: np.ndarray,
                              max_iter: int = 120) -> np.ndarray:
    """Solve grad F0(x) = mu for each target point strictly inside the polygon.

    Damped Newton on the strictly convex F0; steps are capped coordinatewise
    so iterates march into the fan regions without overshooting.
    """
    pts = np.asarray(targets, dtype=float)
    x = np.zeros_like(pts)
    for _ in range(max_iter):
        t = ref.derivative_tables(x)
        res = pts.T - t["d1"]
        if float(np.max(np.abs(res))) < _NEWTON_TOL:
            return x
        step = _solve2(t["d2"], res)
        size = np.max(np.abs(step), axis=0)
        step *= np.minimum(1.0, _NEWTON_CAP / np.maximum(size, 1e-30))
        x = x + step.T
    raise NumericError(
        f"gradient inversion stalled at residual {float(np.max(np.abs(res))):.3e}"
    )


@dataclass
class DualCurvature:
    """Curvature fields of the metric defined by u = u0 + v, one value per node."""

    scalar: np.ndarray
    ric: np.ndarray      # (2, 2, n)
    abs_ric2: np.ndarray
    abs_rm2: np.ndarray
    g: np.ndarray        # (2, 2, n) Hessian of F at the dual point
    ginv: np.ndarray     # (2, 2, n) Hessian of u

    @property
    def abs_rm(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.abs_rm2, 0.0))


class DualReference:
    """Analytic reference data of F0 sampled on a moment grid.

    Precomputes, once per (preset, weights, resolution): the inverse
    gradient image x0(mu), the reference Hessian U0 = F0''(x0) and its
    inverse, the dual potential u0, and the Ricci potential values
    h0(x0(mu)).  kappa0 is the additive normalization constant of h0,
    supplied by the caller (fixed on the log-coordinate grid so both
    pictures share one gauge).
    """

    def __init__(self, grid: MomentGrid, ref: ReferencePotential, kappa0: float):
        self.grid = grid
        self.ref = ref
        self.kappa0 = float(kappa0)
        self.x0 = invert_reference_gradient(ref, grid.mu)
        t = ref.derivative_tables(self.x0)
        self.f0_value = t["value"]
        self.u0 = np.einsum("na,na->n", self.x0, grid.mu) - self.f0_value
        self.U0 = t["d2"]                       # (2, 2, n) = inverse Hessian of u0
        det0 = self.U0[0, 0] * self.U0[1, 1] - self.U0[0, 1] * self.U0[1, 0]
        if np.any(det0 <= 0.0):
            raise NumericError("reference Hessian lost positivity on the moment grid")
        self.det_U0 = det0
        self.Hu0 = np.empty_like(self.U0)       # analytic Hessian of u0
        self.Hu0[0, 0] = self.U0[1, 1] / det0
        self.Hu0[1, 1] = self.U0[0, 0] / det0
        self.Hu0[0, 1] = self.Hu0[1, 0] = -self.U0[0, 1] / det0
        self.h0 = -np.log(det0) - self.f0_value + self.kappa0

    # -- pointwise algebra ------------------------------------------------

    def hessian_ratio(self, hess_v: np.ndarray):
        """det and trace data of I + U0 Hess v (the Hessian ratio of u to u0).

        Returns (q, p) with q = det(I + M) and p = 2 + tr M; the full
        Hessian of u is positive definite exactly where q > 0 and p > 0.
        """
        m = np.einsum("ak...,kb...->ab...", self.U0, hess_v)
        q = (1.0 + m[0, 0]) * (1.0 + m[1, 1]) - m[0, 1] * m[1, 0]
        p = 2.0 + m[0, 0] + m[1, 1]
        return q, p

    def metric(self, v: np.ndarray):
        """(g, ginv, q) of the metric of u0 + v; raises on lost convexity."""
        hv = self.grid.hessian(v)
        q, p = self.hessian_ratio(hv)
        if np.any(q <= 0.0) or np.any(p <= 0.0):
            node = int(np.argmax((q <= 0.0) | (p <= 0.0)))
            raise DegenerateMetricError(
                "dual potential lost convexity at moment node "
                f"{tuple(self.grid.box_ij[node])}", node=node,
            )
        ginv = self.Hu0 + hv                    # Hessian of u
        det_u = ginv[0, 0] * ginv[1, 1] - ginv[0, 1] * ginv[1, 0]
        g = np.empty_like(ginv)
        g[0, 0] = ginv[1, 1] / det_u
        g[1, 1] = ginv[0, 0] / det_u
        g[0, 1] = g[1, 0] = -ginv[0, 1] / det_u
        return g, ginv, q

    def curvature(self, v: np.ndarray) -> DualCurvature:
        """Curvature tensors from the dual side, finite everywhere on the polygon.

        The derivative tensors of F at the image point are assembled by the
        chain rule d/dx_c = sum_k U_kc d/dmu_k applied to U = F''; all
        intermediate fields are bounded on the closed polygon, so unlike the
        log-coordinate computation this one needs no trusted-region mask.
        """
        g, ginv, _ = self.metric(v)
        gr = self.grid
        u_flat = {  # mu-derivatives of the entries of U = g
            (a, b): g[a, b] for a in range(2) for b in range(2)
        }
        dU = np.empty((2, 2, 2, gr.node_count))       # dU[k, a, b]
        for a in range(2):
            for b in range(2):
                dU[0, a, b] = gr.d1[0] @ u_flat[(a, b)]
                dU[1, a, b] = gr.d1[1] @ u_flat[(a, b)]
        d3 = np.einsum("kc...,kab...->abc...", g, dU)
        d3 = (d3 + np.transpose(d3, (0, 2, 1, 3)) + np.transpose(d3, (2, 1, 0, 3))
              + np.transpose(d3, (1, 0, 2, 3)) + np.transpose(d3, (1, 2, 0, 3))
              + np.transpose(d3, (2, 0, 1, 3))) / 6.0

        ddU = np.empty((2, 2, 2, 2, gr.node_count))   # ddU[k, l, a, b]
        for a in range(2):
            for b in range(2):
                ddU[0, 0, a, b] = gr.d2[0] @ u_flat[(a, b)]
                ddU[0, 1, a, b] = ddU[1, 0, a, b] = gr.d2[1] @ u_flat[(a, b)]
                ddU[1, 1, a, b] = gr.d2[2] @ u_flat[(a, b)]
        d4 = (np.einsum("ld...,lkc...,kab...->abcd...", g, dU, dU, optimize=True)
              + np.einsum("ld...,kc...,lkab...->abcd...", g, g, ddU, optimize=True))
        perms = [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 2, 1), (1, 0, 2, 3),
                 (2, 1, 0, 3), (3, 1, 2, 0), (2, 3, 0, 1), (1, 2, 3, 0)]
        d4 = sum(np.transpose(d4, p + (4,)) for p in perms) / len(perms)

        ld2 = np.einsum("ab...,abjk...->jk...", ginv, d4) - np.einsum(
            "ap...,bq...,abj...,pqk...->jk...", ginv, ginv, d3, d3, optimize=True
        )
        ric = -ld2
        scalar = np.einsum("jk...,jk...->...", ginv, ric)
        rm = -d4 + np.einsum("pq...,iqk...,pjl...->ijkl...", ginv, d3, d3,
                             optimize=True)
        abs_rm2 = np.einsum(
            "ia...,jb...,kc...,ld...,ijkl...,abcd...->...",
            ginv, ginv, ginv, ginv, rm, rm, optimize=True,
        )
        abs_ric2 = np.einsum(
            "ia...,jb...,ij...,ab...->...", ginv, ginv, ric, ric, optimize=True
        )
        if not np.all(np.isfinite(abs_rm2)):
            raise NumericError("non-finite dual curvature (NaN propagation)")
        return DualCurvature(scalar=scalar, ric=ric, abs_ric2=abs_ric2,
                             abs_rm2=abs_rm2, g=g, ginv=ginv)

    # -- transforms between the pictures ----------------------------------

    def v_from_field(self, field: PotentialField, max_iter: int = 80) -> np.ndarray:
        """Sample v = u - u0 of a log-coordinate potential on the moment grid.

        Solves grad F(x) = mu per node with the field's spline derivatives;
        only used to import nonzero initial data, so the spline accuracy of
        phi is the limiting factor.
        """
        same_ref = (field.reference.weights.shape == self.ref.weights.shape
                    and np.array_equal(field.reference.weights, self.ref.weights))
        if same_ref and not np.any(field.phi):
            return np.zeros(self.grid.node_count)
        x = self.x0.copy()
        for _ in range(max_iter):
            d = field.derivatives_at(x, max_order=2)
            res = self.grid.mu.T - d["d1"]
            if float(np.max(np.abs(res))) < 1e-10:
                break
            step = _solve2(d["d2"], res)
            size = np.max(np.abs(step), axis=0)
            step *= np.minimum(1.0, _NEWTON_CAP / np.maximum(size, 1e-30))
            x = x + step.T
        else:
            raise NumericError("gradient inversion of the initial field stalled")
        value = field.reference.value(x) + field._phi_spline()(
            x[:, 0], x[:, 1], grid=False
        )
        u = np.einsum("na,na->n", x, self.grid.mu) - value
        return u - self.u0

    def phi_on_grid(self, v: np.ndarray, template: PotentialField,
                    max_iter: int = 60) -> np.ndarray:
        """Evaluate phi = F - F0 of the dual state on the log-coordinate grid.

        For each grid point x the Legendre maximum is located by solving
        y + grad v(grad F0(y)) = x for the reference-picture point y; u0 at
        the resulting moment point is then exact (closed form through F0),
        so the only interpolation error is the bicubic spline of the smooth
        field v.
        """
        sp = self.grid.spline(v)
        X = np.stack(template.grid.meshgrid(), axis=-1).reshape(-1, 2)
        y = X.copy()
        ref = template.reference

        def objective(xs, ys):
            """Legendre objective <x - y, grad F0(y)> + F0(y) - v(mu(y)).

            Concave in mu = grad F0(y); the solve maximizes it, which keeps
            corner points from cycling between basins when the plain Newton
            step overshoots across a short polygon edge.
            """
            t = ref.derivative_tables(ys)
            m = t["d1"]
            return (np.einsum("na,an->n", xs - ys, m) + t["value"]
                    - sp(m[0], m[1], grid=False))

        factors = np.array([1.0, 0.5, 0.25, 0.1, 0.03])

        def newton(act):
            """Damped Newton on the active set; returns unconverged indices."""
            for it in range(max_iter):
                t = ref.derivative_tables(y[act])
                mu_a = t["d1"]                 # (2, m)
                gv = np.stack([
                    sp(mu_a[0], mu_a[1], dx=1, grid=False),
                    sp(mu_a[0], mu_a[1], dy=1, grid=False),
                ])
                res = y[act].T + gv - X[act].T
                live = np.max(np.abs(res), axis=0) >= 1e-10
                if not np.any(live):
                    return act[:0]
                act = act[live]
                res = res[:, live]
                mu_a = mu_a[:, live]
                d2 = t["d2"][:, :, live]
                hv = np.empty((2, 2, len(act)))
                hv[0, 0] = sp(mu_a[0], mu_a[1], dx=2, grid=False)
                hv[0, 1] = hv[1, 0] = sp(mu_a[0], mu_a[1], dx=1, dy=1,
                                         grid=False)
                hv[1, 1] = sp(mu_a[0], mu_a[1], dy=2, grid=False)
                jac = np.eye(2)[:, :, None] + np.einsum(
                    "ak...,kb...->ab...", hv, d2, optimize=True
                )
                step = _solve2(jac, res)
                size = np.max(np.abs(step), axis=0)
                step *= np.minimum(1.0, _NEWTON_CAP / np.maximum(size, 1e-30))
                if it < 3:
                    y[act] = y[act] - step.T
                    continue
                trials = y[act][None] - factors[:, None, None] * step.T[None]
                vals = objective(
                    np.broadcast_to(X[act], trials.shape).reshape(-1, 2),
                    trials.reshape(-1, 2),
                ).reshape(len(factors), len(act))
                y[act] = np.take_along_axis(
                    trials, np.argmax(vals, axis=0)[None, :, None], axis=0
                )[0]
            return act

        def pattern_rescue(act):
            """Derivative-free ascent for stragglers near polygon corners.

            Where the spline Hessian of v is too noisy for Newton (a few
            nodes whose moment image sits in a corner fan), maximize the
            concave objective directly over shrinking candidate stencils.
            """
            offs = np.array([(i, j) for i in range(-3, 4)
                             for j in range(-3, 4)], dtype=float)
            scale = 0.5
            for _ in range(14):
                trials = y[act][None] + scale * offs[:, None, :]
                vals = objective(
                    np.broadcast_to(X[act], trials.shape).reshape(-1, 2),
                    trials.reshape(-1, 2),
                ).reshape(len(offs), len(act))
                y[act] = np.take_along_axis(
                    trials, np.argmax(vals, axis=0)[None, :, None], axis=0
                )[0]
                scale *= 0.5

        act = newton(np.arange(len(X)))
        if len(act):
            pattern_rescue(act)
            act = newton(act)
        if len(act):
            raise NumericError("Legendre transform back to log coordinates stalled")
        t = ref.derivative_tables(y)
        mu = t["d1"]
        f0_at_y = t["value"]
        # F(x) = <x, mu*> - u(mu*);  u0(mu*) = <y, mu*> - F0(y) exactly
        u_star = np.einsum("na,an->n", y, mu) - f0_at_y + sp(mu[0], mu[1], grid=False)
        f = np.einsum("na,an->n", X, mu) - u_star
        f0_at_x = ref.value(X)
        return (f - f0_at_x).reshape(template.grid.shape)
