"""Tensor fields of a torus-invariant Kahler metric on the log-coordinate grid.

Conventions fixed here and used package-wide:

* coordinates x_j = log |z_j|^2 and torus angles theta_j (period 2 pi);
* the complex metric components equal the Hessian F_jk of the convex
  potential F, the Riemannian metric splits into (1/2) F_jk dx_j dx_k on the
  base and 2 F_jk dtheta_j dtheta_k on the fibers;
* volume density det(F_jk) dx dtheta, so integrals carry a (2 pi)^2 factor
  from the analytically integrated torus fibers;
* curvature, Ricci and all norms use the complex-trace convention, under
  which a Kahler-Einstein metric has scalar curvature equal to the complex
  dimension times its Einstein constant (here R = 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import stencils
from .errors import DegenerateMetricError, DomainError, NumericError, OracleInconclusiveError
from .potentials import Grid, PotentialField, PotentialTables

TWO_PI_SQ = (2.0 * math.pi) ** 2

# Pointwise curvature is reliable only where the metric eigenvalues are not
# exponentially small: index raising amplifies the finite-difference error of
# the potential, and measured curvature error tracks ~0.02 h^4 / lambda_min.
# The trusted mask keeps nodes where that bound stays below a few percent;
# sup-norm diagnostics are restricted to it.
TRUST_ERR_COEFF = 0.02
TRUST_ERR_TOL = 0.05
TRUST_ABS_FLOOR = 1e-6


def trust_floor(grid: Grid) -> float:
    """Smallest metric eigenvalue at which pointwise curvature is still trusted."""
    return max(TRUST_ABS_FLOOR, TRUST_ERR_COEFF * grid.spacing**4 / TRUST_ERR_TOL)


@dataclass
class MetricState:
    """Immutable bundle of tensor fields derived from one potential."""

    grid: Grid
    tables: PotentialTables
    g: np.ndarray        # (2, 2, n, n) complex metric components F_jk
    ginv: np.ndarray     # (2, 2, n, n)
    det: np.ndarray      # (n, n)
    logdet_d1: np.ndarray  # (2, n, n) gradient of log det F
    ric: np.ndarray      # (2, 2, n, n) reduced Ricci tensor
    scalar: np.ndarray   # (n, n) complex scalar curvature
    rm: np.ndarray       # (2, 2, 2, 2, n, n) curvature tensor R_{i jbar k lbar}
    abs_rm2: np.ndarray  # (n, n) |Rm|^2
    abs_ric2: np.ndarray  # (n, n) |Ric|^2
    trusted: np.ndarray  # (n, n) bool, metric eigenvalues above the trust floor

    @property
    def abs_rm(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.abs_rm2, 0.0))

    def masked_sup(self, field: np.ndarray) -> float:
        """Supremum of |field| over the trusted region."""
        return float(np.max(np.abs(field[self.trusted])))

    def peak(self) -> tuple[tuple[int, int], float]:
        """Location and value of the trusted-region supremum of |Rm|."""
        arm = np.where(self.trusted, self.abs_rm, -np.inf)
        flat = int(np.argmax(arm))
        ij = np.unravel_index(flat, arm.shape)
        return (int(ij[0]), int(ij[1])), float(arm[ij])


def scalar_curvature_from_derivs(d2, d3, d4):
    """Complex scalar curvature from derivative tensors of F (any point layout)."""
    det = d2[0, 0] * d2[1, 1] - d2[0, 1] * d2[1, 0]
    ginv = np.empty_like(d2)
    ginv[0, 0] = d2[1, 1] / det
    ginv[1, 1] = d2[0, 0] / det
    ginv[0, 1] = -d2[0, 1] / det
    ginv[1, 0] = -d2[1, 0] / det
    ld2 = np.einsum("ab...,abjk...->jk...", ginv, d4) - np.einsum(
        "ap...,bq...,abj...,pqk...->jk...", ginv, ginv, d3, d3, optimize=True
    )
    return -np.einsum("jk...,jk...->...", ginv, ld2)


def assemble(source, on_degenerate: str = "raise") -> MetricState:
    """Compute every tensor field of the metric defined by a potential.

    Accepts a PotentialField or raw PotentialTables.  Raises
    DegenerateMetricError if the Hessian fails positive definiteness at any
    node and NumericError on NaN propagation.  With ``on_degenerate="mask"``
    non-convex nodes are instead dropped from the measure (det set to zero)
    and from the trusted mask; flows use this for the exponentially light
    slaved region near the box boundary, where the extrapolated closure
    cannot track the true degenerate Hessian.
    """
    if on_degenerate not in ("raise", "mask"):
        raise DomainError(f"unknown degenerate-node policy {on_degenerate!r}")
    tables = source.tables() if isinstance(source, PotentialField) else source
    g = tables.d2
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    if not np.all(np.isfinite(det)):
        raise NumericError("non-finite metric determinant (NaN propagation)")
    bad = (det <= 0.0) | (g[0, 0] <= 0.0)
    if np.any(bad):
        if on_degenerate == "raise" or np.all(bad):
            ij = np.unravel_index(int(np.argmax(bad)), det.shape)
            raise DegenerateMetricError(
                f"potential lost convexity at grid node {ij}",
                node=(int(ij[0]), int(ij[1])),
            )
        det = np.where(bad, 0.0, det)
    safe_det = np.where(bad, 1.0, det)
    ginv = np.empty_like(g)
    ginv[0, 0] = g[1, 1] / safe_det
    ginv[1, 1] = g[0, 0] / safe_det
    ginv[0, 1] = -g[0, 1] / safe_det
    ginv[1, 0] = -g[1, 0] / safe_det

    d3, d4 = tables.d3, tables.d4
    ld1 = np.einsum("ab...,abj...->j...", ginv, d3)
    ld2 = np.einsum("ab...,abjk...->jk...", ginv, d4) - np.einsum(
        "ap...,bq...,abj...,pqk...->jk...", ginv, ginv, d3, d3, optimize=True
    )
    ric = -ld2
    scalar = np.einsum("jk...,jk...->...", ginv, ric)

    rm = -d4 + np.einsum("pq...,iqk...,pjl...->ijkl...", ginv, d3, d3, optimize=True)
    abs_rm2 = np.einsum(
        "ia...,jb...,kc...,ld...,ijkl...,abcd...->...",
        ginv, ginv, ginv, ginv, rm, rm, optimize=True,
    )
    abs_ric2 = np.einsum(
        "ia...,jb...,ij...,ab...->...", ginv, ginv, ric, ric, optimize=True
    )
    if not (np.all(np.isfinite(scalar)) and np.all(np.isfinite(abs_rm2))):
        raise NumericError("non-finite curvature field (NaN propagation)")
    half_tr = 0.5 * (g[0, 0] + g[1, 1])
    lam_min = half_tr - np.sqrt(
        np.maximum(0.25 * (g[0, 0] - g[1, 1]) ** 2 + g[0, 1] * g[1, 0], 0.0)
    )
    trusted = (lam_min >= trust_floor(tables.grid)) & ~bad
    if not np.any(trusted):
        raise DegenerateMetricError("metric fell below the trust floor everywhere")
    return MetricState(
        grid=tables.grid, tables=tables, g=g, ginv=ginv, det=det,
        logdet_d1=ld1, ric=ric, scalar=scalar, rm=rm,
        abs_rm2=abs_rm2, abs_ric2=abs_ric2, trusted=trusted,
    )


def integrate(state: MetricState, field) -> float:
    """(2 pi)^2 sum of field * det F * h^2 in fixed row-major order."""
    h2 = state.grid.spacing ** 2
    integrand = np.broadcast_to(np.asarray(field, dtype=float), state.det.shape)
    return TWO_PI_SQ * h2 * float(np.sum(integrand * state.det))


def volume(state: MetricState) -> float:
    return integrate(state, 1.0)


def mean_scalar(state: MetricState) -> float:
    return integrate(state, state.scalar) / volume(state)


# ---------------------------------------------------------------------------
# divisor areas


def _ext_gcd(a: int, b: int):
    if b == 0:
        return (a, 1, 0)
    g, u, v = _ext_gcd(b, a % b)
    return (g, v, u - (a // b) * v)


def divisor_area(field: PotentialField, edge, pull: float = 0.9) -> float:
    """Measured symplectic area of the toric divisor over one polygon edge.

    The divisor area is 2 pi times the moment-image extent along the edge,
    counted in lattice steps.  We evaluate <grad F, xi> (with xi dual to the
    primitive edge direction) at two points deep inside the normal cones of
    the edge's endpoints, where the moment image sits exponentially close to
    the respective vertices.
    """
    L = field.grid.half_width
    edges = field.preset.polytope.edges
    k = edges.index(edge)
    prev_e = edges[(k - 1) % len(edges)]
    next_e = edges[(k + 1) % len(edges)]
    d = (edge.end[0] - edge.start[0], edge.end[1] - edge.start[1])
    g = math.gcd(abs(d[0]), abs(d[1]))
    dp = (d[0] // g, d[1] // g)
    gg, u, v = _ext_gcd(dp[0], dp[1])
    if gg < 0:
        u, v = -u, -v
    xi = np.array([u, v], dtype=float)  # <dp, xi> = 1
    n = np.array(edge.normal, dtype=float)
    c_a = np.array(prev_e.normal, dtype=float) + n
    c_b = np.array(next_e.normal, dtype=float) + n
    x_a = pull * L * c_a / np.max(np.abs(c_a))
    x_b = pull * L * c_b / np.max(np.abs(c_b))
    ya, yb = field.gradient_at(np.stack([x_a, x_b]))
    return 2.0 * math.pi * float((yb - ya) @ xi)


def divisor_areas(field: PotentialField) -> dict:
    return {e: divisor_area(field, e) for e in field.preset.polytope.edges}


# ---------------------------------------------------------------------------
# Legendre-dual curvature oracle


@dataclass
class LegendreReport:
    max_mismatch: float
    involution_error: float
    y_lo: np.ndarray
    y_hi: np.ndarray
    dual_axis0: np.ndarray
    dual_axis1: np.ndarray
    dual_values: np.ndarray  # u(y) on the dual grid


def legendre_dual_check(field: PotentialField, shrink: float = 3.0,
                        newton_steps: int = 60, tol: float = 1e-11) -> LegendreReport:
    """Independent scalar-curvature oracle through the symplectic potential.

    Legendre-transforms F on an interior moment rectangle, evaluates the
    dual-picture scalar curvature -sum_jk d^2/dy_j dy_k of the inverse
    Hessian of u, and compares with the direct computation mapped through
    grad F.  Returns the maximum mismatch over a safe interior subregion.
    """
    grid = field.grid
    a = grid.half_width / shrink
    y_lo = field.gradient_at(np.array([-a, -a]))
    y_hi = field.gradient_at(np.array([a, a]))
    span = y_hi - y_lo
    y_lo = y_lo + 0.05 * span
    y_hi = y_hi - 0.05 * span
    n = grid.resolution
    ax0 = np.linspace(y_lo[0], y_hi[0], n + 1)
    ax1 = np.linspace(y_lo[1], y_hi[1], n + 1)
    Y = np.stack(np.meshgrid(ax0, ax1, indexing="ij"), axis=-1)

    # invert the gradient map by Newton from the box center
    x = np.zeros_like(Y)
    for _ in range(newton_steps):
        d = field.derivatives_at(x, max_order=2)
        grad = np.moveaxis(d["d1"], 0, -1)
        res = grad - Y
        err = float(np.max(np.abs(res)))
        if err < tol:
            break
        hess = np.moveaxis(d["d2"], (0, 1), (-2, -1))
        try:
            step = np.linalg.solve(hess, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise OracleInconclusiveError(f"gradient inversion failed: {exc}") from exc
        x = x - step
        if np.max(np.abs(x)) > grid.half_width:
            raise OracleInconclusiveError(
                "gradient inversion left the grid box (moment rectangle too wide)"
            )
    else:
        raise OracleInconclusiveError(
            f"Newton inversion of grad F stalled at residual {err:.3e}"
        )

    d = field.derivatives_at(x, max_order=4)
    w = d["d2"]  # inverse Hessian of u equals Hessian of F at x(y)
    h0 = ax0[1] - ax0[0]
    h1 = ax1[1] - ax1[0]
    d2_0 = stencils.derivative_matrix(n + 1, h0, 2)
    d2_1 = stencils.derivative_matrix(n + 1, h1, 2)
    d1_0 = stencils.derivative_matrix(n + 1, h0, 1)
    d1_1 = stencils.derivative_matrix(n + 1, h1, 1)
    r_dual = -(d2_0 @ w[0, 0] + w[1, 1] @ d2_1.T + 2.0 * (d1_0 @ w[0, 1] @ d1_1.T))
    r_direct = scalar_curvature_from_derivs(d["d2"], d["d3"], d["d4"])

    m = max(4, n // 16)
    mismatch = float(np.max(np.abs(r_dual[m:-m, m:-m] - r_direct[m:-m, m:-m])))

    u = np.einsum("...a,...a->...", x, Y) - (
        field.reference.value(x) + (field._phi_spline()(x[..., 0], x[..., 1], grid=False)
                                    if np.any(field.phi) else 0.0)
    )
    return LegendreReport(
        max_mismatch=mismatch, involution_error=err, y_lo=y_lo, y_hi=y_hi,
        dual_axis0=ax0, dual_axis1=ax1, dual_values=u,
    )


# ---------------------------------------------------------------------------
# diameter and volume-ratio surrogates


def _base_graph(state: MetricState):
    """Sparse 8-neighbor graph with edge lengths from the base metric (1/2) F dx."""
    n0, n1 = state.det.shape
    h = state.grid.spacing
    idx = np.arange(n0 * n1).reshape(n0, n1)
    rows, cols, vals = [], [], []
    for off in ((1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (2, -1), (1, -2)):
        s0 = slice(None, -off[0]) if off[0] else slice(None)
        t0 = slice(off[0], None) if off[0] else slice(None)
        if off[1] > 0:
            s1, t1 = slice(None, -off[1]), slice(off[1], None)
        elif off[1] < 0:
            s1, t1 = slice(-off[1], None), slice(None, off[1])
        else:
            s1 = t1 = slice(None)
        gm = 0.5 * (state.g[:, :, s0, s1] + state.g[:, :, t0, t1])
        dx = np.array(off, dtype=float) * h
        quad = np.einsum("a,ab...,b->...", dx, gm, dx)
        length = np.sqrt(0.5 * np.maximum(quad, 0.0))
        rows.append(idx[s0, s1].ravel())
        cols.append(idx[t0, t1].ravel())
        vals.append(length.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    m = n0 * n1
    graph = coo_matrix((vals, (rows, cols)), shape=(m, m))
    return (graph + graph.T).tocsr()


def _fiber_diameters(state: MetricState, samples: int = 13) -> np.ndarray:
    """Diameter of each flat torus fiber (metric 2 F_jk dtheta dtheta)."""
    valid = (state.det > 0.0).reshape(-1)
    gram = 2.0 * state.g.reshape(2, 2, -1)[:, :, valid]
    t = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    cell = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    shifts = 2.0 * math.pi * np.array(
        [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float
    )
    pts = cell[:, None, :] + shifts[None, :, :]  # (S, 9, 2)
    quad = np.einsum("spa,abm,spb->spm", pts, gram, pts, optimize=True)
    dist2 = np.min(quad, axis=1)  # (S, M)
    return np.sqrt(np.max(dist2, axis=0))


def diameter_surrogate(state: MetricState) -> float:
    """Documented diameter surrogate, monotone under metric scaling.

    Combines the shortest-path diameter of the base grid graph with the
    largest torus-fiber diameter; the larger of the two is reported, since
    angular distance can always be traversed where fibers are small.
    """
    graph = _base_graph(state)
    n0, n1 = state.det.shape
    corners = [0, n1 - 1, (n0 - 1) * n1, n0 * n1 - 1]
    mids = [n1 // 2, (n0 // 2) * n1, (n0 // 2) * n1 + n1 - 1, (n0 - 1) * n1 + n1 // 2]
    center = [(n0 // 2) * n1 + n1 // 2]
    sources = corners + mids + center
    dist = dijkstra(graph, indices=sources, directed=False)
    if not np.all(np.isfinite(dist)):
        raise NumericError("base grid graph is disconnected")
    far = int(np.argmax(np.max(dist, axis=0)))
    second = dijkstra(graph, indices=[far], directed=False)
    base = float(max(np.max(dist), np.max(second)))
    fiber = float(np.max(_fiber_diameters(state)))
    return max(base, fiber)


def ball_probe_centers(state: MetricState, count: int = 5,
                       clearance: float = 1.15) -> list:
    """Deterministic well-separated probe centers for ball-volume ratios.

    Candidate nodes must sit at graph distance >= clearance from the box
    boundary, since a ball reaching the boundary would wrap around a
    divisor where the chart graph cannot follow it.  The deepest interior
    node seeds a farthest-point sweep that adds the remaining centers.
    """
    graph = _base_graph(state)
    n0, n1 = state.det.shape
    idx = np.arange(n0 * n1).reshape(n0, n1)
    boundary = np.unique(np.concatenate(
        [idx[0, :], idx[-1, :], idx[:, 0], idx[:, -1]]))
    d_bdy = dijkstra(graph, indices=boundary, directed=False, min_only=True)
    eligible = d_bdy >= clearance
    if not np.any(eligible):
        raise DomainError(
            f"no grid node is {clearance} away from the box boundary; "
            "the chart window is too small for ball probes")
    chosen = [int(np.argmax(d_bdy))]
    min_dist = np.full(n0 * n1, np.inf)
    while len(chosen) < count:
        d = dijkstra(graph, indices=[chosen[-1]], directed=False)[0]
        min_dist = np.minimum(min_dist, d)
        cand = np.where(eligible, min_dist, -np.inf)
        nxt = int(np.argmax(cand))
        if nxt in chosen:
            break
        chosen.append(nxt)
    return [(int(c // n1), int(c % n1)) for c in chosen]


def ball_volume_ratio(state: MetricState, center: tuple[int, int], r: float) -> float:
    """Vol(B(center, r)) / r^4 with fibers integrated analytically.

    The geodesic ball is approximated by the graph-distance sublevel set on
    the base; each base point contributes the area of the flat fiber disk of
    the remaining radius.
    """
    if not 0.0 < r < 1.0:
        raise DomainError("ball radius must lie in (0, 1) in metric units")
    n0, n1 = state.det.shape
    graph = _base_graph(state)
    src = center[0] * n1 + center[1]
    dist = dijkstra(graph, indices=[src], directed=False)[0].reshape(n0, n1)
    boundary = np.concatenate([dist[0, :], dist[-1, :], dist[:, 0], dist[:, -1]])
    if float(np.min(boundary)) <= r:
        raise DomainError("ball radius exceeds the grid reach from this center")
    inside = dist < r
    h2 = state.grid.spacing ** 2
    vol = 0.5 * math.pi * h2 * float(
        np.sum(np.sqrt(state.det[inside]) * (r * r - dist[inside] ** 2))
    )
    return vol / r**4
