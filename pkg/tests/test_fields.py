import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffns.errors import InsufficientHistory
from ffns.fields import (
    Grid,
    cheb_lobatto,
    clenshaw_curtis,
    conormal_derivative,
    export_csv_slice,
    read_snapshot,
    time_derivative_from_history,
    write_snapshot,
)


class TestGrid:
    def test_shapes_and_orientation(self, small_grid):
        g = small_grid
        assert g.vshape == (17, 16, 16)
        assert g.z[0] == -1.0 and g.z[-1] == 0.0
        assert np.all(np.diff(g.z) > 0)

    @pytest.mark.parametrize("ny,nz", [(7, 17), (15, 17), (16, 4)])
    def test_rejects_bad_sizes(self, ny, nz):
        with pytest.raises(ValueError):
            Grid(2 * np.pi, ny, nz, 1.0)

    def test_band_keeps_two_thirds(self, grid):
        assert grid.kmax_band == 10
        n = np.fft.fftfreq(grid.ny, 1.0 / grid.ny)
        assert grid.band[np.argmax(n == 10), 0]
        assert not grid.band[np.argmax(n == 11), 0]

    def test_fft_roundtrip(self, small_grid, rng):
        f = rng.standard_normal(small_grid.vshape)
        assert np.allclose(small_grid.ifft(small_grid.fft(f)), f, atol=1e-13)

    def test_horizontal_derivative_of_mode(self, grid):
        y1, y2 = grid.Y
        f = np.sin(3 * y1) * np.cos(2 * y2)
        assert np.allclose(grid.dx(f, 1), 3 * np.cos(3 * y1) * np.cos(2 * y2), atol=1e-12)
        assert np.allclose(grid.dx(f, 2), -2 * np.sin(3 * y1) * np.sin(2 * y2), atol=1e-12)

    def test_vertical_derivative_of_polynomial(self, grid):
        f = np.broadcast_to((grid.z**5 - 2 * grid.z)[:, None, None], grid.vshape)
        expect = (5 * grid.z**4 - 2)[:, None, None]
        assert np.allclose(grid.dz(f), expect, atol=1e-10)

    def test_dealias_is_idempotent(self, small_grid, rng):
        f = rng.standard_normal(small_grid.sshape)
        once = small_grid.dealias(f)
        assert np.allclose(small_grid.dealias(once), once, atol=1e-14)

    def test_volume_integral_of_one(self, grid):
        assert grid.integrate(np.ones(grid.vshape)) == pytest.approx(4 * np.pi**2)


def test_cheb_matrix_differentiates_cubic():
    x, D = cheb_lobatto(6)
    assert np.allclose(D @ x**3, 3 * x**2, atol=1e-12)


def test_clenshaw_curtis_integrates_polynomials():
    x, _ = cheb_lobatto(10)
    w = clenshaw_curtis(10)
    assert np.sum(w) == pytest.approx(2.0)
    assert np.sum(w * x**4) == pytest.approx(0.4)


def test_conormal_z3_vanishes_on_planes(small_grid, rng):
    f = rng.standard_normal(small_grid.vshape)
    out = conormal_derivative(f, small_grid, 3)
    assert np.all(out[0] == 0.0) and np.all(out[-1] == 0.0)
    with pytest.raises(ValueError):
        conormal_derivative(f, small_grid, 4)


@settings(max_examples=30, deadline=None)
@given(order=st.integers(1, 3), c=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       dt=st.floats(1e-3, 0.5))
def test_backward_differences_exact_on_low_degree(order, c, dt):
    # order + 2 points reproduce polynomials of degree order + 1
    deg = order + 1
    coef = np.array(c[:deg + 1])
    t = -dt * np.arange(order + 2)[::-1]
    ring = [np.array([np.polyval(coef[::-1], s)]) for s in t]
    d = np.polynomial.polynomial.polyder(coef, order)
    expect = np.polynomial.polynomial.polyval(0.0, d)
    got = time_derivative_from_history(ring, order, dt)[0]
    assert got == pytest.approx(expect, rel=1e-6, abs=1e-6 * max(1.0, dt ** -order))


def test_history_too_short():
    with pytest.raises(InsufficientHistory):
        time_derivative_from_history([np.zeros(3)] * 2, 1, 0.1)
    with pytest.raises(ValueError):
        time_derivative_from_history([np.zeros(3)] * 6, 4, 0.1)


def test_snapshot_roundtrip(tmp_path, small_grid, rng):
    g = small_grid
    data = {k: rng.standard_normal(g.vshape) for k in ("v1", "v2", "v3", "q")}
    data["h"] = rng.standard_normal(g.sshape)
    path = tmp_path / "s.ffns"
    write_snapshot(path, g, 0.25, data)
    g2, t, back = read_snapshot(path)
    assert (g2.ny, g2.nz, g2.L, g2.b) == (g.ny, g.nz, g.L, g.b)
    assert t == 0.25
    for k in data:
        assert np.array_equal(back[k], data[k])


def test_snapshot_rejects_truncation(tmp_path, small_grid):
    g = small_grid
    data = {k: np.zeros(g.vshape) for k in ("v1", "v2", "v3", "q")}
    data["h"] = np.zeros(g.sshape)
    path = tmp_path / "s.ffns"
    write_snapshot(path, g, 0.0, data)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="size"):
        read_snapshot(path)


def test_csv_slice(tmp_path, small_grid):
    f = np.broadcast_to(small_grid.z[:, None, None], small_grid.vshape)
    path = tmp_path / "slice.csv"
    export_csv_slice(path, small_grid, f, y2_index=0)
    rows = path.read_text().splitlines()
    assert rows[0] == "y1,z,value"
    assert len(rows) == 1 + small_grid.nz * small_grid.ny
    with pytest.raises(ValueError):
        export_csv_slice(path, small_grid, f)
