import math

import numpy as np
import pytest

from fanoflow.errors import DomainError
from fanoflow.flow import FlowProblem
from fanoflow.metric import assemble, integrate
from fanoflow.polytopes import preset
from fanoflow.potentials import Grid, PotentialField, PotentialTables
from fanoflow.soliton import (certify_endpoint, divisor_obstruction, futaki,
                              rescale_at_peak, ricci_fields, soliton_residual)


@pytest.fixture(scope="module")
def bl1_ref():
    field = PotentialField(preset("bl1"), Grid(half_width=12.0, resolution=64))
    return FlowProblem(field).dual


@pytest.fixture(scope="module")
def round_ref():
    field = PotentialField(preset("p1xp1"), Grid(half_width=12.0, resolution=64),
                           "round")
    return FlowProblem(field).dual


def test_affine_h_has_zero_residual(bl1_ref):
    # any h affine in the moment coordinates has holomorphic gradient,
    # so the residual must vanish to round-off at every resolution
    v = np.zeros(bl1_ref.grid.node_count)
    h = 0.3 + 0.7 * bl1_ref.grid.mu[:, 0] - 1.1 * bl1_ref.grid.mu[:, 1]
    res = soliton_residual(bl1_ref, v, h=h)
    assert res.sup < 1e-9
    assert res.l2 < 1e-9


def test_quadratic_h_has_nonzero_residual(bl1_ref):
    v = np.zeros(bl1_ref.grid.node_count)
    h = bl1_ref.grid.mu[:, 0] ** 2
    res = soliton_residual(bl1_ref, v, h=h)
    assert res.sup > 0.1
    assert res.l2 > 0.1


def test_round_reference_is_einstein(round_ref):
    fields = ricci_fields(round_ref, np.zeros(round_ref.grid.node_count))
    assert fields.sup < 1e-8
    assert fields.grad_sup < 1e-7


def test_futaki_symmetry_zeros(round_ref):
    # the square polygon is symmetric under both coordinate flips
    fut = futaki(round_ref, np.zeros(round_ref.grid.node_count))
    assert np.max(np.abs(fut)) < 1e-10


def test_futaki_nonzero_for_bl1(bl1_ref):
    fut = futaki(bl1_ref, np.zeros(bl1_ref.grid.node_count))
    # the blow-up breaks the flip symmetries, so the invariant cannot vanish
    assert float(np.linalg.norm(fut)) > 1e-2


def test_certificate_ke_at_round_fixed_point(round_ref):
    cert = certify_endpoint(round_ref, np.zeros(round_ref.grid.node_count),
                            t_final=1.0, initial_residual=1e-12)
    assert cert.verdict == "KE"
    assert abs(cert.coefficients[1]) < 1e-8
    assert abs(cert.coefficients[2]) < 1e-8


def test_certificate_undecided_without_decay(bl1_ref):
    cert = certify_endpoint(bl1_ref, np.zeros(bl1_ref.grid.node_count),
                            t_final=0.0, initial_residual=1.0)
    # the bl1 reference is far from a soliton: residual has not decayed
    assert cert.verdict == "undecided"
    assert cert.residual_ratio > 1e-3


def test_certificate_json_round_trip(round_ref):
    import json

    cert = certify_endpoint(round_ref, np.zeros(round_ref.grid.node_count),
                            t_final=2.5, initial_residual=1e-12)
    data = json.loads(cert.to_json())
    assert data["verdict"] == "KE"
    assert data["preset"] == "p1xp1"
    assert data["t_final"] == 2.5


def test_rescale_at_peak_normalizes_curvature():
    grid = Grid(half_width=12.0, resolution=64)
    state = assemble(PotentialField(preset("bl1"), grid), on_degenerate="mask")
    ev = rescale_at_peak(state, t=1.5)
    # |Rm| scales pointwise by 1/q; compare over the trust region the peak
    # was taken from (the rescaled state recomputes its own, wider mask)
    arm = np.sqrt(np.where(state.trusted, ev.rescaled.abs_rm2, 0.0))
    assert float(np.max(arm)) == pytest.approx(1.0, rel=1e-10)
    # int |Rm|^2 dV is scale invariant in four real dimensions
    assert ev.energy == pytest.approx(integrate(state, state.abs_rm2),
                                      rel=1e-10)
    assert ev.t == 1.5 and ev.q > 1.0


def test_rescale_flat_state_raises():
    grid = Grid(half_width=2.0, resolution=48)
    state = assemble(PotentialTables.from_quadratic(grid))
    with pytest.raises(DomainError):
        rescale_at_peak(state, t=0.0)


def test_obstruction_nonzero_cycle_excluded():
    v = divisor_obstruction({"core sphere": math.pi}, class_quantum=math.pi)
    assert v["verdict"] == "excluded"
    assert "core sphere" in v["reason"]


def test_obstruction_zero_cycles_admissible():
    v = divisor_obstruction({"c": 0.0}, class_quantum=2.0)
    assert v["verdict"] == "admissible deepest bubble"


def test_obstruction_toric_is_impossible():
    v = divisor_obstruction({"c": 0.0}, class_quantum=2.0, toric=True)
    assert v["verdict"] == "impossible"


def test_obstruction_no_cycles_warns():
    v = divisor_obstruction({}, class_quantum=1.0)
    assert v["verdict"] == "admissible deepest bubble"
    assert "warning" in v
