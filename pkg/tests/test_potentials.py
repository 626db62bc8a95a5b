import numpy as np
import pytest

from fanoflow.errors import ConfigurationError, DomainError
from fanoflow.polytopes import preset
from fanoflow.potentials import (Grid, PotentialField, PotentialTables,
                                 ReferencePotential, reference_weights,
                                 round_product_field)


@pytest.fixture(scope="module")
def grid():
    return Grid(half_width=10.0, resolution=48)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        Grid(half_width=10.0, resolution=31)
    with pytest.raises(ConfigurationError):
        Grid(half_width=-1.0, resolution=48)


def test_grid_geometry(grid):
    assert grid.shape == (49, 49)
    assert grid.axis[0] == -10.0 and grid.axis[-1] == 10.0
    assert grid.spacing == pytest.approx(20.0 / 48)


def test_reference_weights_selectors():
    p = preset("p1xp1")
    default = reference_weights(p, "default")
    assert default.shape == (len(p.polytope.lattice_points),)
    assert np.all(default > 0)
    rnd = reference_weights(p, "round")
    assert rnd.shape == default.shape
    explicit = reference_weights(p, np.ones(len(default)))
    assert np.allclose(explicit, 1.0)
    with pytest.raises(ConfigurationError):
        reference_weights(p, np.ones(3))


def test_reference_gradient_stays_in_polytope(grid):
    # grad F is the moment map; its image must be inside the polygon
    for name in ("cp2", "bl2"):
        p = preset(name)
        ref = ReferencePotential(p)
        x = np.stack(grid.meshgrid(), axis=-1)
        g = ref.derivative_tables(x)["d1"]
        for e in p.polytope.edges:
            support = e.normal[0] * g[0] + e.normal[1] * g[1]
            assert support.max() < 1.0 + 1e-9


def test_analytic_tables_match_finite_differences():
    # truncation of the 4th-order stencils at h = 0.125, measured margins
    fine = Grid(half_width=6.0, resolution=96)
    ref = ReferencePotential(preset("bl1"))
    x = np.stack(fine.meshgrid(), axis=-1)
    analytic = ref.derivative_tables(x)
    fd = PotentialTables.from_values(fine, analytic["value"])
    c = slice(8, -8)
    for k, tol in (("d1", 1e-4), ("d2", 2e-4), ("d3", 2e-3), ("d4", 5e-3)):
        diff = np.max(np.abs(analytic[k][..., c, c] - getattr(fd, k)[..., c, c]))
        assert diff < tol, f"{k}: {diff}"


def test_quadratic_tables():
    grid = Grid(half_width=2.0, resolution=32)
    t = PotentialTables.from_quadratic(grid, ((2.0, 0.5), (0.5, 1.0)))
    assert np.allclose(t.d2[0, 0], 2.0)
    assert np.allclose(t.d2[0, 1], 0.5)
    assert np.allclose(t.d3, 0.0)
    x, y = grid.meshgrid()
    assert np.allclose(t.value, x * x + 0.5 * x * y + 0.5 * y * y)


def test_scaled_tables(grid):
    t = PotentialTables.from_quadratic(grid)
    s = t.scaled(3.0)
    assert np.allclose(s.d2, 3.0 * t.d2)
    assert np.allclose(s.value, 3.0 * t.value)


def test_field_with_phi_and_gauge(grid):
    f = PotentialField(preset("cp2"), grid)
    assert not np.any(f.phi)
    bump = np.exp(-np.sum(np.square(np.stack(grid.meshgrid())), axis=0))
    g = f.with_phi(0.1 * bump, gauge=0.7)
    assert g.gauge == 0.7
    assert np.allclose(g.tables().value, f.tables().value + 0.1 * bump)


def test_derivatives_at_matches_tables(grid):
    f = PotentialField(preset("p1xp1"), grid, "round")
    pts = np.array([[0.3, -0.2], [1.1, 0.4]])
    d = f.derivatives_at(pts, max_order=2)
    ref = f.reference.derivative_tables(pts)
    assert np.allclose(d["d2"], ref["d2"], atol=1e-10)


def test_round_product_field_is_product(grid):
    f = round_product_field(grid)
    t = f.tables()
    assert np.allclose(t.d2[0, 1], 0.0, atol=1e-12)
    # each factor depends on its own coordinate only
    assert np.allclose(t.d2[0, 0], t.d2[0, 0][:, :1])


def test_phi_shape_mismatch_raises(grid):
    f = PotentialField(preset("cp2"), grid)
    with pytest.raises(DomainError):
        f.with_phi(np.zeros((3, 3)))
