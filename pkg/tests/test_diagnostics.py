import numpy as np
import pytest

from ffns.diagnostics import (
    NormSpec,
    boundary_sn_max,
    conormal_norm,
    cutoff,
    dissipation_terms,
    energy_balance,
    energy_terms,
    good_unknown,
    integrated_residual,
    record,
    taylor_margin,
    write_records_csv,
)
from ffns.errors import InsufficientHistory
from ffns.fields import conormal_derivative
from ffns.geometry import build_geometry, flat_geometry
from ffns.stepper import HistoryEntry, project_initial_data


def test_gravity_energy_of_cosine(grid):
    h = 0.1 * np.cos(grid.Y[0])
    G = build_geometry(h, None, 0.5, grid)
    kin, grav, cap = energy_terms(np.zeros((3,) + grid.vshape), h, G, 2.0, 0.0)
    # 1/2 g int h^2 = 1/2 * 2 * 0.01 * 2 pi^2
    assert kin == 0.0 and cap == 0.0
    assert grav == pytest.approx(0.02 * np.pi**2, rel=1e-12)


def test_capillary_energy_small_slope(grid):
    a = 1e-3
    h = a * np.cos(grid.Y[0])
    G = build_geometry(h, None, 0.5, grid)
    _, _, cap = energy_terms(np.zeros((3,) + grid.vshape), h, G, 1.0, 0.5)
    # sigma int |grad h|^2 / 2 to leading order
    assert cap == pytest.approx(0.5 * 0.5 * a * a * 2 * np.pi**2, rel=1e-5)


def test_uniform_translation_only_rubs_the_bottom(small_grid):
    G = flat_geometry(small_grid)
    v = np.zeros((3,) + small_grid.vshape)
    v[0] = 1.0
    visc, fric = dissipation_terms(v, G, epsilon=0.1, kappa=2.0)
    assert visc == pytest.approx(0.0, abs=1e-20)
    assert fric == pytest.approx(2 * 2.0 * 0.1 * 4 * np.pi**2)
    assert dissipation_terms(v, G, 0.0, 2.0) == (0.0, 0.0)


class TestBalance:
    t = np.linspace(0.0, 1.0, 21)

    def test_exact_decay_closes(self):
        E = np.exp(-self.t)
        r = integrated_residual((E, E), self.t)
        assert abs(r) < 1e-6
        _, pointwise = energy_balance((E, E), self.t)
        assert np.abs(pointwise).max() < 2e-3

    def test_missing_dissipation_shows_up(self):
        E = np.exp(-self.t)
        assert integrated_residual((E, 0 * E), self.t) == pytest.approx(np.exp(-1) - 1)

    def test_needs_three_records(self):
        with pytest.raises(InsufficientHistory):
            integrated_residual(([1.0, 1.0], [0.0, 0.0]), [0.0, 1.0])

    def test_rejects_uneven_spacing(self):
        with pytest.raises(ValueError):
            integrated_residual(([1.0] * 3, [0.0] * 3), [0.0, 0.1, 0.3])


class TestNorms:
    @pytest.mark.parametrize("kw", [{"kind": "volume"}, {"kind": "surface", "m": 4},
                                    {"kind": "surface", "k": -1}, {"kind": "surface", "s": 0.3}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            NormSpec(**kw)

    def test_label(self):
        assert NormSpec("surface", 1, 2, 0.5).label == "surface:m1k2s0.5"

    def test_constant_field(self, grid):
        f = np.ones(grid.vshape)
        assert conormal_norm([f], NormSpec("volume-conormal"), grid) == pytest.approx(2 * np.pi)
        # derivatives of a constant vanish and add nothing
        assert conormal_norm([f], NormSpec("volume-conormal", 0, 2), grid) == pytest.approx(2 * np.pi)
        assert conormal_norm([f], NormSpec("volume-sup", 0, 1), grid) == pytest.approx(1.0)

    def test_first_conormal_order(self, grid):
        f = np.array(grid.Z * (grid.Z + 1.0))
        Z3 = conormal_derivative(f, grid, 3)
        expect = np.sqrt(grid.integrate(f**2)) + np.sqrt(grid.integrate(Z3**2))
        got = conormal_norm([f], NormSpec("volume-conormal", 0, 1), grid)
        assert got == pytest.approx(expect, rel=1e-12)

    def test_time_derivative_needs_history(self, grid):
        f = np.ones(grid.sshape)
        with pytest.raises(InsufficientHistory):
            conormal_norm([f, f], NormSpec("surface", 1), grid, dt=0.1)
        # linear growth in time: d/dt = 1 everywhere
        ring = [f * 0.0, f * 0.1, f * 0.2]
        val = conormal_norm(ring, NormSpec("surface-sup", 1), grid, dt=0.1)
        assert val == pytest.approx(0.2 + 1.0)

    def test_bare_arrays_need_dt(self, grid):
        f = np.ones(grid.sshape)
        with pytest.raises(ValueError):
            conormal_norm([f, f], NormSpec("surface"), grid)


def test_cutoff_profile(grid):
    chi = cutoff(grid)
    assert chi[0] == 1.0 and chi[-1] == 0.0
    assert np.all(np.diff(chi) <= 1e-15)


def test_taylor_margin_at_rest(small_params):
    g = small_params.grid
    st = project_initial_data(np.zeros((3,) + g.vshape), np.zeros(g.sshape), small_params)
    G = st.geometry(small_params)
    assert taylor_margin(st.q, G, small_params.gravity) == small_params.gravity
    assert boundary_sn_max(st.v, G, small_params.kappa) == 0.0


def test_good_unknown_reduces_to_conormal_on_flat(small_grid, rng):
    G = flat_geometry(small_grid)
    v = rng.standard_normal((3,) + small_grid.vshape)
    q = rng.standard_normal(small_grid.vshape)
    V, Q = good_unknown(v, q, G, 1)
    assert np.allclose(V, conormal_derivative(v, small_grid, 1))
    assert np.allclose(Q, conormal_derivative(q, small_grid, 1))
    with pytest.raises(ValueError):
        good_unknown(v, q, G, "x")
    with pytest.raises(InsufficientHistory):
        good_unknown(v, q, G, "t", history=[])


def test_good_unknown_time_direction(small_grid):
    G = flat_geometry(small_grid)
    v = np.zeros((3,) + small_grid.vshape)
    q = np.zeros(small_grid.vshape)
    h = np.zeros(small_grid.sshape)
    hist = [HistoryEntry(v=v + k, h=h, q=q, t=0.1 * k) for k in range(3)]
    V, _ = good_unknown(v + 2, q, G, "t", history=hist)
    assert np.allclose(V, 10.0)


def test_record_and_csv(tmp_path, small_params):
    p = small_params
    g = p.grid
    st = project_initial_data(np.zeros((3,) + g.vshape), 1e-3 * np.cos(g.Y[0]), p)
    rec = record(st, p, [NormSpec("surface", 0), NormSpec("volume-conormal", 1)])
    assert rec.energy == pytest.approx(rec.gravity_energy + rec.capillary_energy)
    assert np.isnan(rec.norms["volume-conormal:m1k0s0"])
    path = tmp_path / "d.csv"
    write_records_csv(path, [rec, rec])
    head = path.read_text().splitlines()[0].split(",")
    assert head[0] == "t" and "norm[surface:m0k0s0]" in head
    with pytest.raises(ValueError):
        write_records_csv(path, [])
