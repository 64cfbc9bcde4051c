import numpy as np
import pytest

from ffns.geometry import build_geometry, flat_geometry
from ffns.operators import (
    dphi,
    div_phi,
    grad_phi,
    grad_tensor,
    lap_phi,
    strain,
    transport_split,
    vorticity,
)


def _geom(grid, amp=0.1, dh=None):
    y1, y2 = grid.Y
    h = amp * np.exp(np.cos(y1)) * np.sin(y2) / np.e
    return build_geometry(h, dh, 0.5, grid)


def test_gradient_of_phi_is_vertical_unit(grid):
    G = _geom(grid)
    g = grad_phi(G.phi, G)
    assert np.abs(g[0]).max() < 1e-12 and np.abs(g[1]).max() < 1e-12
    assert np.abs(g[2] - 1.0).max() < 1e-12


def test_flat_operators_on_harmonic(small_grid):
    G = flat_geometry(small_grid)
    y1 = small_grid.Y[0]
    # cosh is not periodic in z; exp(z) cos(y1) is harmonic in the strip
    f = np.exp(small_grid.Z) * np.cos(y1)[None]
    assert np.abs(lap_phi(f, G)).max() < 1e-10
    g = grad_phi(f, G)
    assert np.allclose(g[2], f, atol=1e-10)


def test_time_derivative_of_lifted_field(grid):
    # f(t, x) = x3 pulled back: d_t^phi of phi must vanish
    y1, y2 = grid.Y
    dh = 0.2 * np.cos(y1 + y2)
    G = _geom(grid, dh=dh)
    out = dphi(G.phi, G, "t", df_dt=G.dtphi)
    assert np.abs(out).max() < 1e-12
    with pytest.raises(ValueError):
        dphi(G.phi, G, "t")
    with pytest.raises(ValueError):
        dphi(G.phi, G, 4)


def test_translation_has_no_strain(small_grid):
    G = _geom(small_grid)
    one = np.ones(small_grid.vshape)
    v = np.stack([one, 2 * one, 0 * one])
    assert np.abs(strain(v, G)).max() < 1e-13
    assert np.abs(vorticity(v, G)).max() < 1e-13


def test_strain_symmetric_and_trace_is_divergence(grid):
    G = _geom(grid)
    y1, y2 = grid.Y
    z = grid.Z
    v = np.stack([np.cos(z) * np.sin(y1)[None], np.exp(z) * np.cos(y1 + y2)[None],
                  z * (z + 1) * np.sin(y2)[None]])
    S = strain(v, G)
    assert np.array_equal(S[0, 1], S[1, 0])
    T = grad_tensor(v, G)
    tr = grid.dealias(T[0, 0] + T[1, 1] + T[2, 2])
    assert np.abs(tr - div_phi(v, G)).max() < 1e-9


def test_transport_of_constant_is_zero(small_grid):
    G = _geom(small_grid)
    v = np.stack([np.ones(small_grid.vshape)] * 3)
    _, advect = transport_split(v, G)
    assert np.abs(advect(np.full(small_grid.vshape, 3.0))).max() < 1e-13


def test_surface_transport_velocity_vanishes_for_kinematic_motion(grid):
    y1, y2 = grid.Y
    h = 0.05 * np.cos(y1)
    v = np.zeros((3,) + grid.vshape)
    v[2] = 0.1 * np.sin(y2)[None] * (1 + grid.Z)
    h1, h2 = grid.grad_h(h)
    dh = grid.dealias(v[2, -1] - h1 * v[0, -1] - h2 * v[1, -1])
    G = build_geometry(h, dh, 0.5, grid)
    Vz, _ = transport_split(v, G)
    assert np.abs(Vz[-1]).max() < 1e-10
