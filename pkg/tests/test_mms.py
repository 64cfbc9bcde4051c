import numpy as np
import pytest

from ffns.geometry import choose_A
from ffns.mms import ManufacturedSolution
from ffns.operators import div_phi
from ffns.stepper import SimParams, bc_residuals, project_initial_data, step


@pytest.fixture
def mms():
    p = SimParams(ny=16, nz=17, epsilon=1e-3, sigma=0.1, dt=5e-3, cfl=1e3, taylor="off")
    m = ManufacturedSolution(p)
    h0, _ = m.height(0.0)
    m.bind(choose_A(h0, p.grid, p.ext_rate_max)[0])
    return p, m


def test_unbound_solution_refuses(mms):
    p, _ = mms
    with pytest.raises(RuntimeError):
        ManufacturedSolution(p).exact(0.0)


def test_exact_velocity_is_divergence_free(mms):
    p, m = mms
    ex = m.exact(0.3)
    assert np.abs(div_phi(ex.v, ex.G)).max() < 1e-12
    assert np.abs(ex.v[2, 0]).max() < 1e-14


def test_exact_time_derivative_matches_differences(mms):
    _, m = mms
    d = 1e-5
    fd = (m.exact(0.2 + d).v - m.exact(0.2 - d).v) / (2 * d)
    assert np.abs(fd - m.exact(0.2).dv_dt).max() < 1e-8


def test_sources_make_boundary_data_consistent(mms):
    p, m = mms
    ex = m.exact(0.1)
    top, bot = bc_residuals(ex.v, ex.G, p.kappa, m.top_stress(0.1), m.bottom_stress(0.1))
    assert np.abs(top).max() < 1e-14 and np.abs(bot).max() < 1e-14


def test_short_run_tracks_exact_solution(mms):
    p, m = mms
    ex = m.exact(0.0)
    st = project_initial_data(ex.v, ex.h, p, forcing=m)
    assert m.error(st) < 1e-8
    for _ in range(4):
        st = step(st, p, forcing=m)
    assert m.error(st) < 1e-6
