"""Ricci-flat bubble reference: the rotationally symmetric ALE instanton.

Two independent presentations of the same space are implemented and cross
checked.  The torus-invariant chart carries the potential F = f(e^{x1} +
e^{x2}) with f'(u) = sqrt(a^4 + u^2)/u, whose Hessian determinant is exactly
e^{x1 + x2}, so the metric is Ricci-flat wherever defined; it feeds the same
tensor pipeline used for the flow presets and validates the finite-difference
curvature stack against a closed form.  The radial presentation

    ds^2 = (1 - a^4/r^4)^{-1} dr^2
           + (r^2/4)(s1^2 + s2^2) + (r^2/4)(1 - a^4/r^4) s3^2,   r >= a,

supplies the global quantities: ball volumes Vol(r <= R) = pi^2 (R^4 - a^4)/4,
geodesic radii by one-dimensional quadrature, the asymptotic volume ratio
pi^2/4 of the quotient cone at infinity, and the core-sphere area pi a^2.
The chart covers the radial space up to a finite quotient, so pointwise
quantities (curvature tensors) agree while global ones are read off the
radial form; see the reference report for the cross checks actually run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError
from .metric import TWO_PI_SQ, assemble
from .potentials import Grid, PotentialTables
from .soliton import divisor_obstruction

CHART_HALF_WIDTH = 3.0
CHART_RESOLUTION = 128
# Fraction of the box over which chart curvature sups are taken.  Outside it
# the metric condition number grows like e^{2|x|} and finite differences of
# the exponentially large potential dominate the comparison.
CHART_WINDOW = 0.5


# ---------------------------------------------------------------------------
# radial presentation


@dataclass(frozen=True)
class RadialProfile:
    """Closed-form radial data of the instanton with bolt radius a."""

    a: float = 1.0

    def __post_init__(self):
        if self.a <= 0.0:
            raise DomainError("bolt radius must be positive")

    def _check(self, r: float) -> float:
        r = float(r)
        if r <= self.a:
            raise DomainError(
                f"radial coordinate {r} is inside the bolt r = {self.a}")
        return r

    def ball_volume(self, r: float) -> float:
        """Vol(bolt <= radial coordinate <= r), exact."""
        r = self._check(r)
        return math.pi ** 2 * (r ** 4 - self.a ** 4) / 4.0

    def geodesic_radius(self, r: float) -> float:
        """Distance from the bolt to radial coordinate r.

        The defining integral int_a^r (1 - a^4/rho^4)^{-1/2} drho has an
        integrable square-root singularity at the bolt; substituting
        w = sqrt(1 - a^4/rho^4) turns it into the smooth integral
        (a/2) int_0^W (1 - w^2)^{-5/4} dw with W < 1.
        """
        r = self._check(r)
        a = self.a
        r_split = min(r, 2.0 * a)
        w_max = math.sqrt(1.0 - (a / r_split) ** 4)
        val, _ = quad(lambda w: (1.0 - w * w) ** -1.25, 0.0, w_max)
        total = 0.5 * a * val
        if r > r_split:
            tail, _ = quad(lambda rho: (1.0 - (a / rho) ** 4) ** -0.5,
                           r_split, r)
            total += tail
        return total

    def ball_ratio(self, r: float) -> float:
        """Vol(B(t))/t^4 at geodesic radius t = t(r); tends to pi^2/4."""
        return self.ball_volume(r) / self.geodesic_radius(r) ** 4

    @property
    def bolt_area(self) -> float:
        """Symplectic area of the core sphere at r = a."""
        return math.pi * self.a ** 2

    def curvature_energy(self, r_max: float = math.inf) -> float:
        """int |Rm|^2 dV out to radial coordinate r_max by quadrature.

        The curvature norm of the radial metric is |Rm|^2 = 24 a^8 / r^12
        and the volume element integrates to dV = pi^2 r^3 dr, so the total
        energy is 3 pi^2 independent of a.
        """
        if r_max <= self.a:
            raise DomainError("integration range must reach past the bolt")
        val, _ = quad(lambda r: 24.0 * self.a ** 8 * r ** -9.0,
                      self.a, r_max)
        return math.pi ** 2 * val


# ---------------------------------------------------------------------------
# torus-invariant chart


def _radial_factors(u: np.ndarray, a: float) -> tuple:
    """f', f'', f''', f'''' of f with f'(u) = s/u, s = sqrt(a^4 + u^2)."""
    a4 = a ** 4
    s = np.sqrt(a4 + u * u)
    f1 = s / u
    f2 = -a4 / (s * u * u)
    f3 = a4 * (1.0 / (u * s ** 3) + 2.0 / (s * u ** 3))
    f4 = -a4 * (3.0 / (u * u * s ** 3) + 3.0 / s ** 5 + 6.0 / (s * u ** 4))
    return s, f1, f2, f3, f4


def chart_tables(grid: Grid, a: float = 1.0,
                 analytic: bool = True) -> PotentialTables:
    """Derivative tables of F = f(e^{x1} + e^{x2}) on a log-coordinate grid.

    With ``analytic=True`` every partial derivative is evaluated in closed
    form; otherwise only point values are supplied and the tables come from
    the generic finite-difference pipeline, which is what the curvature
    benchmark compares against.
    """
    if a <= 0.0:
        raise DomainError("bolt radius must be positive")
    x1, x2 = grid.meshgrid()
    e = np.stack([np.exp(x1), np.exp(x2)])
    u = e[0] + e[1]
    s, f1, f2, f3, f4 = _radial_factors(u, a)
    a2 = a * a
    value = s + a2 * np.log(u) - a2 * np.log(a2 + s)
    if not analytic:
        return PotentialTables.from_values(grid, value)

    d1 = f1 * e
    d2 = np.empty((2, 2) + grid.shape)
    d3 = np.empty((2, 2, 2) + grid.shape)
    d4 = np.empty((2, 2, 2, 2) + grid.shape)
    for j, k in np.ndindex(2, 2):
        d2[j, k] = f2 * e[j] * e[k] + (f1 * e[j] if j == k else 0.0)
    for j, k, l in np.ndindex(2, 2, 2):
        t = f3 * e[j] * e[k] * e[l]
        if j == k:
            t = t + f2 * e[j] * e[l]
        if j == l:
            t = t + f2 * e[j] * e[k]
        if k == l:
            t = t + f2 * e[k] * e[j]
        if j == k == l:
            t = t + f1 * e[j]
        d3[j, k, l] = t
    for j, k, l, m in np.ndindex(2, 2, 2, 2):
        idx = (j, k, l, m)
        t = f4 * e[j] * e[k] * e[l] * e[m]
        # one coincident pair: f''' times the three remaining exponentials
        for p, q in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
            if idx[p] == idx[q]:
                rest = [idx[r] for r in range(4) if r not in (p, q)]
                t = t + f3 * e[idx[p]] * e[rest[0]] * e[rest[1]]
        # two disjoint pairs
        for (p, q), (r, w) in (((0, 1), (2, 3)), ((0, 2), (1, 3)),
                               ((0, 3), (1, 2))):
            if idx[p] == idx[q] and idx[r] == idx[w]:
                t = t + f2 * e[idx[p]] * e[idx[r]]
        # one coincident triple
        for trip, rest in (((0, 1, 2), 3), ((0, 1, 3), 2), ((0, 2, 3), 1),
                           ((1, 2, 3), 0)):
            if idx[trip[0]] == idx[trip[1]] == idx[trip[2]]:
                t = t + f2 * e[idx[trip[0]]] * e[idx[rest]]
        if j == k == l == m:
            t = t + f1 * e[j]
        d4[j, k, l, m] = t
    return PotentialTables(grid=grid, value=value, d1=d1, d2=d2, d3=d3, d4=d4)


def _window_mask(state, fraction: float) -> np.ndarray:
    grid = state.grid
    x1, x2 = grid.meshgrid()
    box = np.maximum(np.abs(x1), np.abs(x2)) <= fraction * grid.half_width
    return state.trusted & box


def chart_ricci_sup(grid: Grid, a: float = 1.0, analytic: bool = True,
                    window: float = CHART_WINDOW) -> float:
    """sup |Ric|_g over the trusted central window of the chart grid."""
    state = assemble(chart_tables(grid, a, analytic=analytic),
                     on_degenerate="mask")
    ric = np.sqrt(np.maximum(state.abs_ric2, 0.0))
    return float(np.max(ric[_window_mask(state, window)]))


def chart_curvature_energy(grid: Grid, a: float = 1.0) -> float:
    """int |Rm|^2 dV over the chart window (grid quadrature)."""
    from .metric import integrate

    state = assemble(chart_tables(grid, a), on_degenerate="mask")
    return integrate(state, np.where(state.trusted, state.abs_rm2, 0.0))


# ---------------------------------------------------------------------------
# reference report


def reference_report(a: float = 1.0, resolution: int = CHART_RESOLUTION,
                     half_width: float = CHART_HALF_WIDTH,
                     probe_radius_factor: float = 500.0) -> dict:
    """Every closed-form cross check of the bubble reference in one dict.

    Assembled quantities: curvature sups of the analytic and finite-
    difference chart pipelines, the ALE volume ratio at a large probe
    radius against pi^2/4, the core-sphere area, and curvature energies
    from both presentations.
    """
    grid = Grid(half_width=half_width, resolution=resolution)
    prof = RadialProfile(a)
    r_probe = probe_radius_factor * a
    ratio = prof.ball_ratio(r_probe)
    target = math.pi ** 2 / 4.0
    report = {
        "bolt_radius": a,
        "chart_resolution": resolution,
        "chart_half_width": half_width,
        "ricci_sup_analytic": chart_ricci_sup(grid, a, analytic=True),
        "ricci_sup_fd": chart_ricci_sup(grid, a, analytic=False),
        "probe_radius": r_probe,
        "geodesic_radius": prof.geodesic_radius(r_probe),
        "ball_volume": prof.ball_volume(r_probe),
        "ball_ratio": ratio,
        "ball_ratio_target": target,
        "ball_ratio_rel_error": abs(ratio - target) / target,
        "bolt_area": prof.bolt_area,
        "curvature_energy_radial": prof.curvature_energy(),
        "curvature_energy_chart": chart_curvature_energy(grid, a),
    }
    report["obstruction"] = divisor_obstruction(
        {"core sphere": prof.bolt_area}, class_quantum=prof.bolt_area)
    return report
