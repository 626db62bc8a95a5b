"""Normalized Kahler-Ricci flow at the level of torus-invariant potentials.

The flow of the potential, phi_t = log det(F0 + phi)'' / det F0'' + phi - h0,
is integrated in the Legendre-dual picture (see dual): the smooth part v of
the symplectic potential evolves on the fixed moment polygon by

    v_t = log det(I + F0'' Hess v) - <mu, grad v> + v + h0,

with every coefficient bounded, the Kahler class pinned by the domain, and
the automorphism drift reduced to affine gauge modes.  Explicit two-stage
Runge-Kutta stepping is stable at dt ~ spacing^2 there, which is what makes
runs to t = 50 affordable; in log coordinates the same equation carries
exponentially degenerate coefficients and no uniform grid can host it.

Gauge handling: the node mean of v is the one genuinely unstable direction
(it grows like e^t and never touches the metric), so v is stored mean-free
and the mean is integrated separately as the gauge record.  Affine modes of
v drift at most linearly (they are the toric automorphisms) and stay in v.

Curvature is monitored on the dual side, where it is finite across the
whole polygon.  A step block is rejected and dt halved when convexity fails
or the global sup of |Rm| jumps by more than 50%; dt underflow raises a
blow-up signal carrying the curvature peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .dual import DualCurvature, DualReference, build_moment_grid
from .errors import (
    BlowupSuspectedError,
    DegenerateMetricError,
    NormalizationError,
    NumericError,
)
from .metric import MetricState, assemble, integrate, volume
from .potentials import PotentialField

DT_MIN = 1e-10
DT_GROWTH = 1.25
# Safety factor of the explicit stability bound dt <= C h^2 / lambda_max for
# the interior fourth-order stencil under two-stage Runge-Kutta.
CFL_SAFETY = 0.12
# Micro steps per curvature check; rejections rewind a whole block.
CHECK_INTERVAL = 16
REJECT_JUMP = 1.5


# ---------------------------------------------------------------------------
# Ricci potential of an assembled log-coordinate metric


@dataclass
class RicciPotential:
    """h with Ric - g = Hess h, normalized by the volume pairing."""

    h: np.ndarray
    kappa: float
    normalization_residual: float
    sup: float
    bounded_warning: bool


def ricci_potential(state: MetricState) -> RicciPotential:
    """h = -log det F - F + kappa0 with int (e^h - 1) dV = 0.

    The additive constant has a closed form: with w = -log det F - F,
    int e^w det F dx = int e^{-F} dx is a convergent reference mass, so
    kappa0 = -log(mass / V).  A shifted evaluation keeps the exponentials
    in range; nodes where the assembled determinant was masked to zero are
    excluded (they carry no measure).
    """
    t = state.tables
    valid = state.det > 0.0
    h_raw = np.where(valid, -np.log(np.where(valid, state.det, 1.0)) - t.value, 0.0)
    m = float(np.max(h_raw[valid]))
    mass = integrate(state, np.exp(np.where(valid, h_raw - m, -np.inf)))
    vol = volume(state)
    if not (np.isfinite(mass) and mass > 0.0):
        raise NormalizationError("Ricci potential normalization mass is degenerate")
    kappa = -(m + math.log(mass / vol))
    h = np.where(valid, h_raw + kappa, 0.0)
    residual = abs(integrate(state, np.where(valid, np.expm1(h), 0.0))) / vol
    inner = state.grid.resolution // 3
    sl = slice(inner, -inner)
    inner_sup = float(np.max(np.abs(h[sl, sl])))
    outer_sup = float(np.max(np.abs(h[valid])))
    bounded_warning = outer_sup > 3.0 * max(inner_sup, 1.0) + 2.0
    return RicciPotential(h=h, kappa=kappa, normalization_residual=residual,
                          sup=outer_sup, bounded_warning=bounded_warning)


# ---------------------------------------------------------------------------
# flow state


@dataclass
class FlowState:
    """One accepted point of the trajectory, in dual-picture variables.

    v is the mean-free smooth part of the symplectic potential; gauge is its
    integrated mean (pure gauge, grows like e^t).  sup_rm and max_ric are
    the global curvature monitors from the last acceptance check.
    """

    v: np.ndarray
    gauge: float
    t: float
    dt: float
    step_index: int
    sup_rm: float
    max_ric: float
    lam_max: float
    calm_streak: int = 0


@dataclass
class FlowSample:
    """Materialized view of a FlowState for diagnostics.

    Carries both pictures: the log-coordinate potential field and assembled
    metric (integrals, diameter, spectra) and the dual curvature (pointwise
    sup norms, finite everywhere).
    """

    state: FlowState
    field: PotentialField
    metric: MetricState
    curvature: DualCurvature
    c_of_t: float
    phidot_dual: np.ndarray  # phi_t at the moment nodes
    drift: tuple = (0.0, 0.0, 0.0)  # affine gauge record (shift, b1, b2)

    @property
    def t(self) -> float:
        return self.state.t


class FlowProblem:
    """Flow dynamics for one preset/weights/grid triple."""

    def __init__(self, initial: PotentialField, sigma: float = 0.2,
                 dual_resolution: Optional[int] = None):
        self.sigma = float(sigma)
        self.template = PotentialField(initial.preset, initial.grid,
                                       initial.reference.weights)
        self.ref_state = assemble(self.template)
        self.h0_potential = ricci_potential(self.ref_state)
        self.h0 = self.h0_potential.h
        self.det0 = self.ref_state.det
        self.volume0 = volume(self.ref_state)
        self.grid = build_moment_grid(
            initial.preset, dual_resolution or initial.grid.resolution
        )
        self.dual = DualReference(self.grid, initial.reference,
                                  self.h0_potential.kappa)
        v0 = self.dual.v_from_field(initial)
        self._gauge0 = float(np.mean(v0)) - initial.gauge
        self._v0 = v0 - float(np.mean(v0))
        # flattened operator/coefficient caches for the hot rhs path
        gr = self.grid
        self._d1x, self._d1y = gr.d1
        self._dxx, self._dxy, self._dyy = gr.d2
        u0 = self.dual.U0
        self._u00 = np.ascontiguousarray(u0[0, 0])
        self._u01 = np.ascontiguousarray(u0[0, 1])
        self._u11 = np.ascontiguousarray(u0[1, 1])
        self._mu0 = np.ascontiguousarray(gr.mu[:, 0])
        self._mu1 = np.ascontiguousarray(gr.mu[:, 1])
        # weighted projector onto the affine gauge modes of v: a constant
        # shifts the potential, a linear part translates it in log
        # coordinates (a torus automorphism).  Solitons advance linearly
        # along these modes, so snapshots are taken in the projected frame.
        a = np.column_stack([np.ones(gr.node_count), gr.mu[:, 0], gr.mu[:, 1]])
        w = gr.quad_weights
        self._affine_basis = a
        self._affine_pinv = np.linalg.solve((a * w[:, None]).T @ a,
                                            (a * w[:, None]).T)

    # -- dynamics ---------------------------------------------------------

    def rhs(self, v: np.ndarray) -> np.ndarray:
        """Time derivative of the dual potential (raises on lost convexity)."""
        h00 = self._dxx @ v
        h01 = self._dxy @ v
        h11 = self._dyy @ v
        m00 = self._u00 * h00 + self._u01 * h01
        m11 = self._u01 * h01 + self._u11 * h11
        q = (1.0 + m00) * (1.0 + m11) - (
            (self._u00 * h01 + self._u01 * h11)
            * (self._u01 * h00 + self._u11 * h01)
        )
        p = 2.0 + m00 + m11
        if q.min() <= 0.0 or p.min() <= 0.0:
            node = int(np.argmax((q <= 0.0) | (p <= 0.0)))
            raise DegenerateMetricError(
                "dual potential lost convexity at moment node "
                f"{tuple(self.grid.box_ij[node])}", node=node,
            )
        return (np.log(q)
                - (self._mu0 * (self._d1x @ v) + self._mu1 * (self._d1y @ v))
                + v + self.dual.h0)

    def _f(self, v: np.ndarray, gauge: float):
        vdot = self.rhs(v)
        m = float(np.mean(vdot))
        return vdot - m, gauge + m

    def _rk2(self, v: np.ndarray, gauge: float, dt: float):
        f1v, f1g = self._f(v, gauge)
        f2v, f2g = self._f(v + dt * f1v, gauge + dt * f1g)
        return v + 0.5 * dt * (f1v + f2v), gauge + 0.5 * dt * (f1g + f2g)

    def dt_target(self, max_ric: float, lam_max: float) -> float:
        """Adaptive step: sigma * h^2 / ((1 + max|Ric|) lambda_max), CFL-capped."""
        h2 = self.grid.spacing ** 2
        dt = self.sigma * h2 / ((1.0 + max_ric) * lam_max)
        return min(dt, CFL_SAFETY * h2 / lam_max)

    def _monitors(self, v: np.ndarray) -> tuple[DualCurvature, float, float, float]:
        cur = self.dual.curvature(v)
        sup_rm = float(np.max(cur.abs_rm))
        max_ric = float(np.sqrt(np.max(cur.abs_ric2)))
        g = cur.g
        lam_max = float(np.max(
            0.5 * (g[0, 0] + g[1, 1]) + np.sqrt(np.maximum(
                0.25 * (g[0, 0] - g[1, 1]) ** 2 + g[0, 1] * g[1, 0], 0.0))
        ))
        return cur, sup_rm, max_ric, lam_max

    def initial_state(self) -> FlowState:
        _, sup_rm, max_ric, lam_max = self._monitors(self._v0)
        return FlowState(
            v=self._v0, gauge=self._gauge0, t=0.0,
            dt=self.dt_target(max_ric, lam_max), step_index=0,
            sup_rm=sup_rm, max_ric=max_ric, lam_max=lam_max,
        )

    def step(self, fs: FlowState, t_target: Optional[float] = None) -> FlowState:
        """Advance one accepted block of micro steps (one curvature check).

        Convexity failures and |Rm| jumps larger than REJECT_JUMP rewind the
        block and halve dt; dt underflow raises the blow-up signal with the
        current curvature peak.
        """
        dt_nominal = fs.dt
        while True:
            if dt_nominal < DT_MIN:
                node = int(np.argmax(self.dual.curvature(fs.v).abs_rm2))
                raise BlowupSuspectedError(
                    f"time step underflow at t = {fs.t:.6f}; curvature peak "
                    f"|Rm| = {fs.sup_rm:.4e} at moment node "
                    f"{tuple(self.grid.box_ij[node])}",
                    t=fs.t, peak_node=tuple(int(c) for c in self.grid.box_ij[node]),
                    peak_value=fs.sup_rm,
                )
            remaining = math.inf if t_target is None else t_target - fs.t
            if remaining <= 0.0:
                return fs
            k = CHECK_INTERVAL
            dt = dt_nominal
            if remaining < k * dt:
                k = max(1, math.ceil(remaining / dt))
                dt = remaining / k
            try:
                v, gauge = fs.v, fs.gauge
                for _ in range(k):
                    v, gauge = self._rk2(v, gauge, dt)
                cur, sup_rm, max_ric, lam_max = self._monitors(v)
            except (DegenerateMetricError, NumericError):
                dt_nominal *= 0.5
                fs = replace(fs, dt=dt_nominal, calm_streak=0)
                continue
            if sup_rm > REJECT_JUMP * fs.sup_rm + 1e-12:
                dt_nominal *= 0.5
                fs = replace(fs, dt=dt_nominal, calm_streak=0)
                continue
            calm = fs.calm_streak + 1
            target = self.dt_target(max_ric, lam_max)
            if dt_nominal < target and calm >= 4:
                dt_next = min(dt_nominal * DT_GROWTH, target)
                calm = 0
            else:
                dt_next = min(dt_nominal, target)
            return FlowState(
                v=v, gauge=gauge, t=fs.t + k * dt, dt=dt_next,
                step_index=fs.step_index + k, sup_rm=sup_rm,
                max_ric=max_ric, lam_max=lam_max, calm_streak=calm,
            )

    def advance_to(self, fs: FlowState, t_target: float) -> FlowState:
        while fs.t < t_target - 1e-12:
            fs = self.step(fs, t_target)
        return fs

    # -- materialization --------------------------------------------------

    def sample(self, fs: FlowState) -> FlowSample:
        coef = self._affine_pinv @ fs.v
        v_snap = fs.v - self._affine_basis @ coef
        phi = self.dual.phi_on_grid(v_snap, self.template)
        field = self.template.with_phi(phi, gauge=-fs.gauge)
        metric = assemble(field, on_degenerate="mask")
        cur = self.dual.curvature(fs.v)
        # phi_t = -u_t at the moment nodes; the mean part is the gauge speed
        vdot = self.rhs(fs.v)
        m = float(np.mean(vdot))
        phidot = -(vdot - m) - (fs.gauge + m)
        c = self.grid.polygon_mean(phidot)
        return FlowSample(state=fs, field=field, metric=metric, curvature=cur,
                          c_of_t=c, phidot_dual=phidot,
                          drift=tuple(float(x) for x in coef))

    # -- log-coordinate oracle of the same dynamics -----------------------

    def spatial_rhs(self, field: PotentialField) -> np.ndarray:
        """phi_t evaluated directly on the log-coordinate grid.

        Pointwise restatement of the flow for cross-checks; nodes where the
        Hessian degenerates numerically are set to zero.
        """
        t = field.tables()
        det = t.d2[0, 0] * t.d2[1, 1] - t.d2[0, 1] * t.d2[1, 0]
        good = (det > 0.0) & (self.det0 > 0.0)
        ratio = np.where(good, det / np.where(good, self.det0, 1.0), 1.0)
        return np.where(good, np.log(ratio) + field.phi - self.h0, 0.0)


# ---------------------------------------------------------------------------
# trajectory driver


@dataclass
class FlowTrace:
    """Result of a complete (or interrupted) run."""

    preset: str
    rows: list
    t_final: float
    completed: bool
    blowup: Optional[dict] = None
    final_sample: Optional[FlowSample] = None
    problem: Optional[FlowProblem] = None


def run(config, outdir=None, monitor: Optional[Callable] = None,
        progress: Optional[Callable] = None) -> FlowTrace:
    """Integrate a configured flow, recording diagnostics at fixed intervals.

    Deterministic given the config; persists snapshots and the diagnostics
    CSV when outdir is set, including the partial trace if the run ends in
    a blow-up signal.
    """
    from . import diagnostics, snapshot
    from .config import build_problem

    if outdir is not None:
        import os

        os.makedirs(str(outdir), exist_ok=True)
    problem, t_end, every = build_problem(config)
    builder = diagnostics.RowBuilder(
        problem,
        lambda1=getattr(config, "lambda1", False),
    )
    rows = []
    trace = FlowTrace(preset=problem.template.preset.name, rows=rows,
                      t_final=0.0, completed=False, problem=problem)
    fs = problem.initial_state()
    times = [i * every for i in range(int(round(t_end / every)) + 1)]
    try:
        for i, t in enumerate(times):
            fs = problem.advance_to(fs, t)
            smp = problem.sample(fs)
            rows.append(builder.row(smp))
            trace.t_final = fs.t
            trace.final_sample = smp
            if monitor is not None:
                monitor(smp)
            if progress is not None:
                progress(fs)
            if outdir is not None:
                snapshot.write_snapshot(snapshot.snapshot_path(outdir, fs.t),
                                        smp.field, fs.t)
        trace.completed = True
    except BlowupSuspectedError as exc:
        trace.blowup = {
            "t": exc.t, "peak_node": exc.peak_node, "peak_value": exc.peak_value,
        }
        exc.trace = trace
        raise
    finally:
        if outdir is not None and rows:
            diagnostics.write_csv(diagnostics.csv_path(outdir), rows)
    return trace
