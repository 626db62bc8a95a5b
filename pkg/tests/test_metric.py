import math

import numpy as np
import pytest

from fanoflow.errors import DegenerateMetricError, DomainError
from fanoflow.metric import (TWO_PI_SQ, assemble, ball_probe_centers,
                             ball_volume_ratio, diameter_surrogate,
                             divisor_areas, integrate, legendre_dual_check,
                             mean_scalar, volume)
from fanoflow.polytopes import PRESET_NAMES, divisor_targets, preset
from fanoflow.potentials import Grid, PotentialField, PotentialTables


@pytest.fixture(scope="module")
def grid():
    return Grid(half_width=12.0, resolution=96)


@pytest.fixture(scope="module")
def round_state(grid):
    return assemble(PotentialField(preset("p1xp1"), grid, "round"),
                    on_degenerate="mask")


def test_flat_quadratic_has_zero_curvature():
    grid = Grid(half_width=2.0, resolution=48)
    state = assemble(PotentialTables.from_quadratic(grid, ((2.0, 0.3), (0.3, 1.0))))
    assert np.max(np.abs(state.scalar)) < 1e-10
    assert np.max(state.abs_rm2) < 1e-10
    assert np.allclose(state.det, 2.0 - 0.09)


def test_round_product_is_einstein(round_state):
    # the round product metric has R = 2 and |Ric|^2 = 2 pointwise
    assert round_state.masked_sup(round_state.scalar - 2.0) < 1e-9
    assert round_state.masked_sup(round_state.abs_ric2 - 2.0) < 1e-8
    assert round_state.masked_sup(round_state.abs_rm2 - 2.0) < 1e-8


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_volume_matches_polygon_area(name, grid):
    # Vol = (2 pi)^2 * Area(P): the box truncation error is exponentially small
    state = assemble(PotentialField(preset(name), grid), on_degenerate="mask")
    expected = TWO_PI_SQ * float(preset(name).polytope.area())
    assert volume(state) == pytest.approx(expected, rel=5e-3)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_mean_scalar_is_two(name, grid):
    state = assemble(PotentialField(preset(name), grid), on_degenerate="mask")
    assert mean_scalar(state) == pytest.approx(2.0, abs=2e-2)


@pytest.mark.parametrize("name", ["cp2", "bl1", "bl3"])
def test_divisor_areas_match_class_targets(name, grid):
    field = PotentialField(preset(name), grid)
    areas = divisor_areas(field)
    targets = divisor_targets(preset(name))
    for edge, target in targets.items():
        assert areas[edge] == pytest.approx(target, rel=1e-2)


def test_integrate_linear(round_state):
    # odd integrand over the symmetric square polygon vanishes
    mu1 = round_state.tables.d1[0]
    assert abs(integrate(round_state, mu1)) < 1e-6 * volume(round_state)


def test_degenerate_hessian_raises():
    grid = Grid(half_width=2.0, resolution=48)
    with pytest.raises(DegenerateMetricError):
        assemble(PotentialTables.from_quadratic(grid, ((1.0, 2.0), (2.0, 1.0))))


def test_degenerate_policy_validation():
    grid = Grid(half_width=2.0, resolution=48)
    t = PotentialTables.from_quadratic(grid)
    with pytest.raises(DomainError):
        assemble(t, on_degenerate="ignore")


def test_diameter_scales_like_sqrt(round_state):
    base = diameter_surrogate(round_state)
    scaled = assemble(round_state.tables.scaled(4.0), on_degenerate="mask")
    assert diameter_surrogate(scaled) == pytest.approx(2.0 * base, rel=1e-6)


def test_round_diameter_value(round_state):
    # product of two round spheres of diameter pi: diameter = pi sqrt(2).
    # the surrogate can undershoot slightly (box truncation clips the
    # poles) or overshoot (graph paths), but must stay close
    d = diameter_surrogate(round_state)
    exact = math.pi * math.sqrt(2.0)
    assert 0.95 * exact < d < 1.2 * exact


def test_ball_ratio_small_radius_is_euclidean(round_state):
    centers = ball_probe_centers(round_state)
    ratio = ball_volume_ratio(round_state, centers[0], 0.1)
    # flat value is pi^2/2; curvature correction at r = 0.1 is ~ 1%
    assert ratio == pytest.approx(math.pi ** 2 / 2.0, rel=5e-2)


def test_ball_ratio_rejects_unreachable_radius(round_state):
    with pytest.raises(DomainError):
        ball_volume_ratio(round_state, (1, 1), 0.9)
    with pytest.raises(DomainError):
        ball_volume_ratio(round_state, (48, 48), 1.5)


def test_probe_centers_are_distinct(round_state):
    centers = ball_probe_centers(round_state, count=5)
    assert len(set(centers)) == 5


def test_legendre_dual_check_round(grid):
    field = PotentialField(preset("p1xp1"), grid, "round")
    report = legendre_dual_check(field)
    assert report.max_mismatch < 1e-3
    assert report.involution_error < 1e-10
