import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffns.errors import ChartFolds, DiffeoViolated, NoAdmissibleA, SurfaceTouchesBottom
from ffns.geometry import (
    build_geometry,
    chart_w3_top,
    choose_A,
    extend_height,
    flat_geometry,
    geodesic_chart,
    lift_slope_max,
    mean_curvature,
    surface_energy_density,
)


def _surface(grid, seed, amp=0.1, modes=3):
    rng = np.random.default_rng(seed)
    y1, y2 = grid.Y
    h = np.zeros(grid.sshape)
    for m1 in range(-modes, modes + 1):
        for m2 in range(0, modes + 1):
            a, b = rng.standard_normal(2) / (1 + m1 * m1 + m2 * m2)
            h += a * np.cos(m1 * y1 + m2 * y2) + b * np.sin(m1 * y1 + m2 * y2)
    h -= h.mean()
    return amp * h / np.abs(h).max()


def test_extension_matches_boundary_values(small_grid):
    h = _surface(small_grid, 0)
    eta = extend_height(h, 0.5, small_grid)
    assert np.array_equal(eta[-1], h)
    assert np.all(eta[0] == 0.0)


def test_extension_of_single_mode(grid):
    y1 = grid.Y[0]
    eta = extend_height(np.cos(2 * y1), 0.3, grid)
    z = grid.z[:, None, None]
    expect = (1 + z) * np.exp(0.6 * z) * np.cos(2 * y1)[None]
    assert np.allclose(eta, expect, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), A=st.floats(1e-3, 1.0))
def test_extension_is_linear(small_grid, a, b, A):
    h1, h2 = _surface(small_grid, 1), _surface(small_grid, 2)
    lhs = extend_height(a * h1 + b * h2, A, small_grid)
    rhs = a * extend_height(h1, A, small_grid) + b * extend_height(h2, A, small_grid)
    assert np.allclose(lhs, rhs, atol=1e-13 * (1 + abs(a) + abs(b)))


def test_extension_rejects_nonpositive_rate(small_grid):
    with pytest.raises(ValueError):
        extend_height(np.zeros(small_grid.sshape), 0.0, small_grid)


class TestChooseA:
    def test_flat_surface_keeps_max_rate(self, small_grid):
        A, margin = choose_A(np.zeros(small_grid.sshape), small_grid)
        assert A == 1.0 and margin == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(4))
    def test_floor_holds_pointwise(self, grid, seed):
        h = _surface(grid, seed, amp=0.6)
        A, margin = choose_A(h, grid)
        G = build_geometry(h, None, A, grid, check=False)
        assert margin >= 0
        assert G.J.min() >= 0.5 * (1 + h.min() / grid.b) - 1e-12

    def test_rejects_surface_at_bottom(self, small_grid):
        h = np.full(small_grid.sshape, -1.0)
        with pytest.raises(SurfaceTouchesBottom):
            choose_A(h, small_grid)

    def test_no_admissible_rate(self, small_grid):
        # a sawtooth at the grid scale defeats every rate on a short lattice
        h = 0.95 * (-1.0) ** np.arange(small_grid.ny)[:, None] * np.ones(small_grid.sshape)
        with pytest.raises(NoAdmissibleA):
            choose_A(h, small_grid, levels=2)


def test_lift_slope_of_single_mode(grid):
    h = 0.4 * np.cos(grid.Y[0])
    assert lift_slope_max(h, 0.25, grid) == pytest.approx(0.1, rel=1e-12)


def test_flat_geometry_is_identity(small_grid):
    G = flat_geometry(small_grid)
    assert G.flat
    assert np.allclose(G.J, 1.0) and np.allclose(G.n[2], 1.0)
    assert np.allclose(G.E[0, 0], 1.0) and np.allclose(G.E[2, 2], 1.0)


def test_normal_is_unit_and_projector_idempotent(small_grid):
    G = build_geometry(_surface(small_grid, 3), None, 0.5, small_grid)
    assert np.allclose(np.sum(G.n**2, axis=0), 1.0)
    PP = np.einsum("ij...,jk...->ik...", G.Pi, G.Pi)
    assert np.allclose(PP, G.Pi, atol=1e-14)
    assert np.allclose(np.einsum("ij...,j...->i...", G.Pi, G.n), 0.0, atol=1e-14)


def test_diffeo_violation(small_grid):
    h = 0.9 * np.cos(5 * small_grid.Y[0])
    with pytest.raises(DiffeoViolated):
        build_geometry(h, None, 1.0, small_grid, c0=0.9)


def test_mean_curvature_small_slope(grid):
    y1 = grid.Y[0]
    h = 1e-4 * np.cos(3 * y1)
    assert np.allclose(mean_curvature(h, grid), -9e-4 * np.cos(3 * y1), atol=1e-14)
    assert surface_energy_density(np.zeros(grid.sshape), grid).max() == 0.0


class TestGeodesicChart:
    def test_flat(self, small_grid):
        ch = geodesic_chart(np.zeros(small_grid.sshape), small_grid, 0.2)
        y1, y2 = small_grid.Y
        assert np.allclose(ch.Psi[0], y1[None]) and np.allclose(ch.Psi[2], ch.s[:, None, None])
        assert ch.block_error == 0.0

    def test_block_structure(self, grid):
        ch = geodesic_chart(0.05 * np.cos(grid.Y[0]) * np.sin(grid.Y[1]), grid, 0.1)
        assert ch.block_error < 1e-8
        assert np.all(ch.jacobian > 0)

    def test_folds(self, small_grid):
        h = 0.3 * np.cos(4 * small_grid.Y[0])
        with pytest.raises(ChartFolds):
            geodesic_chart(h, small_grid, 0.9)

    def test_w3_vanishes_under_kinematic_condition(self, grid):
        y1, y2 = grid.Y
        h = 0.05 * np.cos(y1) * np.sin(y2)
        v = np.stack([0.1 * np.sin(y2), 0.2 * np.cos(y1), 0.05 * np.sin(y1 + y2)])
        h1, h2 = grid.grad_h(h)
        dh = v[2] - h1 * v[0] - h2 * v[1]
        assert np.abs(chart_w3_top(v, dh, h, grid)).max() < 1e-12
