"""
Time integration of the flattened free-surface system.

Each SSP-RK3 stage rebuilds the geometry from the stage height, projects the
stage velocity onto transformed-divergence-free fields, and then overwrites
the boundary nodes so that impermeability and the tangential stress
conditions hold exactly.  The overwrite perturbs the divergence through the
dense vertical derivative, so project and overwrite alternate until the
divergence is back under tolerance; the boundary conditions are the ones
left holding exactly.
"""
from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field, fields, replace
from functools import cached_property

import numpy as np

from .errors import (
    CflViolation,
    CompatibilityNotReached,
    SurfaceTouchesBottom,
    TaylorViolated,
)
from .fields import Grid
from .geometry import GeometryBundle, build_geometry, choose_A
from .operators import div_phi, grad_phi, lap_phi, transport_split, grad_tensor
from .pressure import DIRICHLET_TOP, assemble_rhs, project, solve

__all__ = [
    "SimParams",
    "FlowState",
    "HistoryEntry",
    "Forcing",
    "stability_bound",
    "enforce_bcs",
    "bc_residuals",
    "project_initial_data",
    "rhs",
    "step",
    "advance",
    "taylor_margin_of",
]

log = logging.getLogger(__name__)

TAYLOR_MODES = ("auto", "error", "warn", "off")


@dataclass(frozen=True)
class SimParams:
    epsilon: float = 0.0
    sigma: float = 0.0
    gravity: float = 1.0
    kappa: float = 1.0
    depth: float = 1.0
    ext_rate_max: float = 1.0
    c0: float = 0.5
    period: float = 2 * np.pi
    ny: int = 32
    nz: int = 33
    dt: float = 1e-3
    t_end: float = 1.0
    cfl: float = 0.5
    tol_proj: float = 1e-9
    tol_bc: float = 1e-10
    history_depth: int = 5
    tol_pressure: float = 1e-11
    taylor: str = "auto"

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0 and 0.0 <= self.sigma <= 1.0):
            raise ValueError("epsilon and sigma must lie in [0, 1]")
        if not (self.gravity > 0 and self.kappa > 0 and self.depth > 0):
            raise ValueError("gravity, kappa and depth must be positive")
        if self.history_depth < 4:
            raise ValueError("history_depth must be at least 4")
        if self.taylor not in TAYLOR_MODES:
            raise ValueError(f"taylor must be one of {TAYLOR_MODES}")
        if not (self.dt > 0 and self.cfl > 0):
            raise ValueError("dt and cfl must be positive")

    @cached_property
    def grid(self) -> Grid:
        return Grid(self.period, self.ny, self.nz, self.depth)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **kw) -> "SimParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class HistoryEntry:
    v: np.ndarray
    h: np.ndarray
    q: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class FlowState:
    """Velocity, height and time plus a ring of recent states.

    ``A`` is the extension rate fixed at initialisation.  ``info`` carries
    per-step solver statistics.
    """

    v: np.ndarray
    h: np.ndarray
    t: float
    A: float
    q: np.ndarray
    history: tuple = ()
    info: dict = field(default_factory=dict)

    def geometry(self, params: SimParams, dh_dt: np.ndarray | None = None) -> GeometryBundle:
        return build_geometry(self.h, dh_dt, self.A, params.grid, params.c0)


class Forcing:
    """Source terms for manufactured solutions; every hook may return None.

    ``volume`` is added to the momentum equation, ``kinematic`` to dh/dt,
    ``top_pressure`` to the surface pressure value, ``top_stress`` to the
    right side of the tangential surface condition and ``bottom_stress``
    (two components) to the right side of the bottom slip condition.
    """

    def volume(self, t, G):
        return None

    def kinematic(self, t, G):
        return None

    def top_pressure(self, t, G):
        return None

    def top_stress(self, t, G):
        return None

    def bottom_stress(self, t, G):
        return None


# ----------------------------------------------------------------------
# stability

def stability_bound(v: np.ndarray, params: SimParams) -> float:
    """Largest admissible dt for the velocity ``v``."""
    grid = params.grid
    k = grid.k_max
    vmax = float(np.abs(v).max())
    limits = [1.0 / np.sqrt(params.gravity * k + params.sigma * k**3)]
    if vmax > 0:
        limits.append(grid.dy / vmax)
    if params.epsilon > 0:
        limits.append(grid.dz_min**2 / (4.0 * params.epsilon))
    return params.cfl * min(limits)


def _check_cfl(v, params, dt):
    bound = stability_bound(v, params)
    if dt > bound * (1.0 + 1e-12):
        raise CflViolation(f"dt = {dt:.4g} exceeds the stability bound {bound:.4g}")


# ----------------------------------------------------------------------
# boundary conditions

def _top_strain_normal(vt, vz, G):
    """Pi S n on the surface from nodal top values and their dz."""
    grid = G.grid
    J = G.J[-1]
    d1, d2 = G.d1phi[-1], G.d2phi[-1]
    n = G.n[:, -1]
    g1, g2 = grid.grad_h(vt)
    fz = vz / J
    T = np.stack([g1 - d1 * fz, g2 - d2 * fz, fz], axis=1)  # T[i, j]
    S = 0.5 * (T + np.swapaxes(T, 0, 1))
    Sn = np.einsum("ij...,j...->i...", S, n)
    return Sn - np.sum(Sn * n, axis=0) * n


def bc_residuals(v: np.ndarray, G: GeometryBundle, kappa: float,
                 tau_top=None, tau_bot=None) -> tuple[np.ndarray, np.ndarray]:
    """Nodal residuals of the tangential conditions.

    Returns ``(Pi S n - tau_top)`` on the surface, shape ``(3, ny, ny)``, and
    ``(S e3)_i - kappa v_i - tau_bot_i`` at the bottom for ``i = 1, 2``.
    """
    grid = G.grid
    D = grid.Dz
    vz_top = np.tensordot(D[-1], v, axes=([0], [1]))
    top = _top_strain_normal(v[:, -1], vz_top, G)
    if tau_top is not None:
        top = top - tau_top
    vz_bot = np.tensordot(D[0], v[:2], axes=([0], [1]))
    g1, g2 = grid.grad_h(v[2, 0])
    bot = np.stack([0.5 * (vz_bot[0] / G.J[0] + g1), 0.5 * (vz_bot[1] / G.J[0] + g2)])
    bot = bot - kappa * v[:2, 0]
    if tau_bot is not None:
        bot = bot - tau_bot
    return top, bot


def enforce_bcs(v: np.ndarray, G: GeometryBundle, params: SimParams, tau_top=None,
                tau_bot=None, maxit: int = 60) -> np.ndarray:
    """Overwrite boundary nodes so that v3 = 0 at the bottom and, for
    epsilon > 0, both tangential stress conditions hold nodewise."""
    v = v.copy()
    v[2, 0] = 0.0
    D = G.grid.Dz
    kappa = params.kappa
    viscous = params.epsilon > 0.0
    if not viscous:
        return v
    # the two planes are coupled through the end columns of D: alternate an
    # exact bottom solve with a Newton-like surface update until both hold
    J0 = G.J[0]
    cb = 0.5 * D[0, 0] / J0 - kappa
    dNN = D[-1, -1]
    gain = 2.0 * G.J[-1] / (G.Nabs[-1] * dNN)
    scale = max(float(np.abs(v).max()), 1.0)
    tol = 1e-3 * params.tol_bc * scale
    for _ in range(maxit):
        rest = np.tensordot(D[0, 1:], v[:2, 1:], axes=([0], [1]))
        rhs_b = -0.5 * rest / J0
        if tau_bot is not None:
            rhs_b = rhs_b + tau_bot
        v[:2, 0] = rhs_b / cb
        w = np.tensordot(D[-1, :-1], v[:, :-1], axes=([0], [1]))
        r = _top_strain_normal(v[:, -1], w + dNN * v[:, -1], G)
        if tau_top is not None:
            r = r - tau_top
        if float(np.abs(r).max()) <= tol:
            break  # the bottom was just solved against the current surface values
        v[:, -1] = v[:, -1] - gain * r
    return v


# ----------------------------------------------------------------------
# right-hand side

def _dh(v, G):
    grid = G.grid
    N = G.N[:, -1]
    return grid.dealias(N[0] * v[0, -1] + N[1] * v[1, -1] + v[2, -1])


def taylor_margin_of(q: np.ndarray, G: GeometryBundle, gravity: float) -> float:
    """min over surface nodes of ``g - d_z^phi q``."""
    qz = G.grid.dz(q)[-1] / G.J[-1]
    return float(np.min(gravity - qz))


def rhs(v: np.ndarray, h: np.ndarray, t: float, G: GeometryBundle, params: SimParams,
        forcing: Forcing | None = None, q0: np.ndarray | None = None, verbose: bool = False):
    """Evaluate ``(dv, dh, q, G)`` for the state ``(v, h)``.

    ``G`` is the static geometry of ``h``; the returned bundle carries the
    surface velocity ``dh``.
    """
    grid = params.grid
    dh = _dh(v, G)
    if forcing is not None:
        fk = forcing.kinematic(t, G)
        if fk is not None:
            dh = dh + fk
    G = G.with_dh_dt(dh)
    fv = forcing.volume(t, G) if forcing is not None else None
    eps = params.epsilon
    T = grad_tensor(v, G)
    lap_v = lap_phi(v, G) if eps > 0 else None
    prob = assemble_rhs(v, h, G, epsilon=eps, sigma=params.sigma, gravity=params.gravity,
                        variant=DIRICHLET_TOP, forcing=fv, tol=params.tol_pressure,
                        T=T, lap_v=lap_v)
    if forcing is not None:
        pt = forcing.top_pressure(t, G)
        if pt is not None:
            prob.G1 = prob.G1 + grid.dealias(pt)
    if G.flat and not np.any(prob.F) and not np.any(prob.G1) and not np.any(prob.G3):
        q = np.zeros(grid.vshape)
        its = 0
    else:
        res = solve(prob, G, x0=q0, verbose=verbose)
        q, its = res.q, res.iterations
    _, advect = transport_split(v, G)
    dv = -advect(v) - grad_phi(q, G)
    if eps > 0:
        dv = dv + eps * lap_v
    if fv is not None:
        dv = dv + fv
    return dv, dh, q, G, its


# ----------------------------------------------------------------------
# constraints

def _constrain(v, h, A, t, params, forcing, rounds=8, verbose=False):
    """Project, then fix the boundary nodes; repeat while the divergence the
    boundary fix leaves behind exceeds the projection tolerance.  Each round
    shrinks it by a factor of five to ten.

    Returns the constrained velocity, the static geometry, the largest
    divergence seen right after a projection and the final divergence.
    """
    G = build_geometry(h, None, A, params.grid, params.c0)
    tt = tb = None
    if forcing is not None and params.epsilon > 0:
        tt = forcing.top_stress(t, G)
        tb = forcing.bottom_stress(t, G)
    after_proj = 0.0
    target = params.tol_proj
    for _ in range(rounds):
        v, _ = project(v, G, atol=1e-2 * params.tol_proj, verbose=verbose)
        after_proj = max(after_proj, float(np.abs(div_phi(v, G)).max()))
        v = enforce_bcs(v, G, params, tt, tb)
        final = float(np.abs(div_phi(v, G)).max())
        if final <= target:
            break
    else:
        log.debug("divergence %.3e above tol_proj after %d rounds", final, rounds)
    return v, G, after_proj, final


def _lift_profiles(grid):
    """Zero-mean shear profiles and their antiderivatives from the bottom.

    ``ft`` vanishes with its slope at z = -b and has slope 1 at z = 0;
    ``fb`` is the mirror image.  Zero mean makes both antiderivatives vanish
    on the two planes, so the solenoidal lifts built from them leave v3
    untouched at the boundaries.
    """
    P = np.polynomial.Polynomial
    b = grid.b
    u = P([0.0, 1.0 / b])                       # z / b
    ft = P([0.0, 1.0]) * (1 + u) ** 3 * (1 + 3 * u)
    fb = P([b, 1.0]) * (-u) ** 3 * (1 - 3 * (1 + u))
    z = grid.z
    out = []
    for f in (ft, fb):
        F = f.integ(lbnd=-b)
        out.append((f(z)[:, None, None], F(z)[:, None, None]))
    return out


def _solenoidal_lift(c, profile, G):
    """``P^{-1} W`` with ``W = (f c1, f c2, -F div c)``: transformed divergence
    free whenever ``c`` is band limited."""
    f, F = profile
    grid = G.grid
    c1, c2 = grid.dealias(c[0]), grid.dealias(c[1])
    divc = grid.dx(c1, 1) + grid.dx(c2, 2)
    v1 = f * c1[None] * G.invJ
    v2 = f * c2[None] * G.invJ
    v3 = -F * divc[None] + G.d1phi * v1 + G.d2phi * v2
    return np.stack([v1, v2, v3])


def project_initial_data(v0: np.ndarray, h0: np.ndarray, params: SimParams,
                         forcing: Forcing | None = None, t0: float = 0.0,
                         max_sweeps: int = 10, floor: float = 1e-2) -> FlowState:
    """Make ``(v0, h0)`` compatible with every constraint of the system.

    The velocity is projected and then corrected by solenoidal shear lifts
    until the tangential residuals fall below ``tol_bc`` or stop
    decreasing.  The part that band-limited lifts cannot reach sits above
    the dealiasing band; the boundary nodes absorb it, followed by the same
    project/fix rounds a time step uses.

    Raises
    ------
    CompatibilityNotReached
        If the final fix moves ``v`` by more than ``floor * max|v|`` or the
        divergence stays above ``tol_proj``.
    """
    grid = params.grid
    v = np.array(v0, dtype=float, copy=True)
    h0 = np.array(h0, dtype=float, copy=True)
    if v.shape != (3,) + grid.vshape or h0.shape != grid.sshape:
        raise ValueError("initial data do not match the grid")
    if float(h0.min()) <= -params.depth:
        raise SurfaceTouchesBottom(f"min(h0) = {h0.min()} reaches the bottom")
    A, _ = choose_A(h0, grid, params.ext_rate_max)
    G = build_geometry(h0, None, A, grid, params.c0)
    zr = grid.z[:, None, None] / grid.b
    if np.any(v[2, 0]):
        v[2] = v[2] - (-zr) ** 3 * v[2, 0]
    tt = tb = None
    if forcing is not None and params.epsilon > 0:
        tt = forcing.top_stress(t0, G)
        tb = forcing.bottom_stress(t0, G)
    prof_top, prof_bot = _lift_profiles(grid)
    res = prev = np.inf
    for sweep in range(max_sweeps):
        v, _ = project(v, G, tol=1e-12)
        if params.epsilon == 0.0:
            break
        rt, rb = bc_residuals(v, G, params.kappa, tt, tb)
        res = max(float(np.abs(rt).max()), float(np.abs(rb).max()))
        log.debug("compatibility sweep %d residual %.3e", sweep, res)
        if res <= params.tol_bc or res > 0.5 * prev:
            break
        prev = res
        # a lift with shear c changes S n by about c / (2 J^2)
        ct = -2.0 * G.J[-1] ** 2 * G.Nabs[-1] * rt[:2]
        cb = -2.0 * G.J[0] ** 2 * rb
        v = v + _solenoidal_lift(ct, prof_top, G) + _solenoidal_lift(cb, prof_bot, G)
    lifted = v
    v, G, _, dmax = _constrain(v, h0, A, t0, params, forcing, rounds=12)
    jump = float(np.abs(v - lifted).max())
    if jump > floor * max(float(np.abs(lifted).max()), 1e-300):
        raise CompatibilityNotReached(
            f"boundary fix moved v by {jump:.3e} after {sweep + 1} lift sweeps (residual {res:.3e})")
    if dmax > params.tol_proj:
        raise CompatibilityNotReached(f"divergence {dmax:.3e} above tol_proj after the boundary fix")
    q = np.zeros(grid.vshape)
    state = FlowState(v=v, h=h0, t=float(t0), A=A, q=q)
    dv, dh, q, _, _ = rhs(v, h0, t0, G, params, forcing)
    entry = HistoryEntry(v=v, h=h0, q=q, t=float(t0))
    return replace(state, q=q, history=(entry,), info={"div_max": dmax, "rhs": (dv, dh, q)})


# ----------------------------------------------------------------------
# time step

def _taylor_check(margin, params):
    if margin >= 0.5 * params.c0 or params.taylor == "off":
        return
    msg = f"Taylor margin {margin:.4g} below c0/2 = {0.5 * params.c0:.4g}"
    mode = params.taylor
    if mode == "auto":
        mode = "warn" if params.sigma > 0 else "error"
    if mode == "error":
        raise TaylorViolated(msg)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


def step(state: FlowState, params: SimParams, forcing: Forcing | None = None,
         dt: float | None = None, verbose: bool = False) -> FlowState:
    """Advance one SSP-RK3 step."""
    dt = params.dt if dt is None else dt
    t0 = state.t
    v0, h0, A = state.v, state.h, state.A
    _check_cfl(v0, params, dt)
    G0 = build_geometry(h0, None, A, params.grid, params.c0)
    cached = state.info.get("rhs")
    if cached is not None:
        dv, dh, q = cached
        its0 = 0
    else:
        dv, dh, q, _, its0 = rhs(v0, h0, t0, G0, params, forcing, q0=state.q, verbose=verbose)
    margin = taylor_margin_of(q, G0, params.gravity)
    _taylor_check(margin, params)
    its = [its0]
    div_proj, div_final = [], []
    # Shu-Osher form: u_{k+1} = a u0 + (1 - a) (u_k + dt L(u_k)), stage time t0 + c dt
    v, h = v0, h0
    for a, c in ((0.0, 1.0), (0.75, 0.5), (1.0 / 3.0, 1.0)):
        h = a * h0 + (1.0 - a) * (h + dt * dh)
        v, G, d, dfin = _constrain(a * v0 + (1.0 - a) * (v + dt * dv), h, A, t0 + c * dt,
                                   params, forcing, verbose=verbose)
        div_proj.append(d)
        div_final.append(dfin)
        _check_cfl(v, params, dt)
        # the last evaluation is the pressure at the new time, reused by the
        # next step and by diagnostics
        dv, dh, q, _, k = rhs(v, h, t0 + c * dt, G, params, forcing, q0=q, verbose=verbose)
        its.append(k)
    t1 = t0 + dt
    ring = deque(state.history, maxlen=params.history_depth)
    ring.append(HistoryEntry(v=v, h=h, q=q, t=t1))
    info = {"div_max": max(div_proj), "div_final": max(div_final), "taylor_margin": margin,
            "pressure_iterations": its, "rhs": (dv, dh, q)}
    return FlowState(v=v, h=h, t=t1, A=A, q=q, history=tuple(ring), info=info)


def advance(state: FlowState, params: SimParams, t_end: float | None = None,
            forcing: Forcing | None = None, callback=None) -> FlowState:
    """Step until ``t_end`` (default ``params.t_end``) with a uniform dt;
    the last step is shortened to land on ``t_end``."""
    t_end = params.t_end if t_end is None else t_end
    nsteps = int(np.ceil((t_end - state.t) / params.dt - 1e-9))
    for _ in range(max(nsteps, 0)):
        dt = min(params.dt, t_end - state.t)
        state = step(state, params, forcing, dt=dt)
        if callback is not None:
            callback(state)
    return state
