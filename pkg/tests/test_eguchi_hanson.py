import math

import numpy as np
import pytest

from fanoflow.eguchi_hanson import (RadialProfile, chart_curvature_energy,
                                    chart_ricci_sup, chart_tables,
                                    reference_report)
from fanoflow.errors import DomainError
from fanoflow.metric import assemble
from fanoflow.potentials import Grid


@pytest.fixture(scope="module")
def chart_grid():
    return Grid(half_width=3.0, resolution=128)


def test_det_hessian_is_exact(chart_grid):
    # det Hess F = e^{x1 + x2} identically: the chart is Ricci-flat by
    # construction, so the Monge-Ampere measure is the flat one
    t = chart_tables(chart_grid, a=1.0, analytic=True)
    x, y = chart_grid.meshgrid()
    det = t.d2[0, 0] * t.d2[1, 1] - t.d2[0, 1] * t.d2[1, 0]
    assert np.max(np.abs(det / np.exp(x + y) - 1.0)) < 1e-12


def test_analytic_ricci_sup(chart_grid):
    assert chart_ricci_sup(chart_grid, analytic=True) < 1e-8


def test_finite_difference_ricci_sup(chart_grid):
    assert chart_ricci_sup(chart_grid, analytic=False) < 1e-4


def test_analytic_and_fd_tables_agree(chart_grid):
    ta = chart_tables(chart_grid, analytic=True)
    tf = chart_tables(chart_grid, analytic=False)
    c = slice(16, -16)
    assert np.max(np.abs(ta.d2[..., c, c] - tf.d2[..., c, c])) < 1e-6


def test_ball_volume_closed_form():
    prof = RadialProfile(a=1.0)
    assert prof.ball_volume(2.0) == pytest.approx(math.pi ** 2 * 15.0 / 4.0)
    # near the bolt the volume vanishes
    assert prof.ball_volume(1.0 + 1e-9) < 1e-6


def test_ball_ratio_approaches_quotient_constant():
    # asymptotically locally euclidean with a half-size sphere at infinity:
    # Vol(B(r)) / r^4 -> pi^2 / 4, half the euclidean ball constant
    prof = RadialProfile(a=1.0)
    far = prof.ball_ratio(500.0)
    assert far == pytest.approx(math.pi ** 2 / 4.0, rel=1e-2)
    # the geodesic radius runs behind the area radius by a fixed deficit,
    # so the ratio approaches the constant from above
    assert prof.ball_ratio(50.0) > far


def test_geodesic_radius_monotone():
    prof = RadialProfile(a=1.0)
    rs = [1.1, 1.5, 2.0, 5.0, 50.0]
    ts = [prof.geodesic_radius(r) for r in rs]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    # far out the geodesic radius tracks r with a bounded deficit
    assert 0.0 < rs[-1] - ts[-1] < 1.0


def test_bolt_area():
    assert RadialProfile(a=1.0).bolt_area == pytest.approx(math.pi)
    assert RadialProfile(a=2.0).bolt_area == pytest.approx(4.0 * math.pi)


def test_domain_error_below_bolt():
    prof = RadialProfile(a=1.0)
    with pytest.raises(DomainError):
        prof.ball_volume(0.9)
    with pytest.raises(DomainError):
        prof.geodesic_radius(1.0)


def test_total_curvature_energy():
    # int |Rm|^2 dV = 3 pi^2, independent of the bolt size
    assert RadialProfile(a=1.0).curvature_energy() == pytest.approx(
        3.0 * math.pi ** 2, rel=1e-9)
    assert RadialProfile(a=0.5).curvature_energy() == pytest.approx(
        3.0 * math.pi ** 2, rel=1e-9)


def test_chart_energy_is_finite(chart_grid):
    # the chart's angular normalization differs from the radial quotient
    # presentation by a finite factor, so the value is not directly
    # comparable to the radial total of 3 pi^2; it must simply come out
    # positive and finite (the density is concentrated at the bolt)
    e = chart_curvature_energy(chart_grid)
    assert 0.0 < e < 1e3
    assert math.isfinite(e)


def test_reference_report_contents():
    rep = reference_report()
    assert rep["ricci_sup_analytic"] < 1e-8
    assert rep["ricci_sup_fd"] < 1e-4
    assert rep["ball_ratio"] == pytest.approx(math.pi ** 2 / 4.0, rel=5e-2)
    assert rep["bolt_area"] == pytest.approx(math.pi)
    assert rep["obstruction"]["verdict"] == "excluded"
