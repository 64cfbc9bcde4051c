"""
Variable-coefficient elliptic solves for the pressure and the projection.

The pressure satisfies ``-div(E grad q) = F`` in the strip with either a
Dirichlet value ``G1`` on the surface (the form used by the time stepper) or a
conormal flux ``G2`` there (diagnostic form); the bottom always carries the
conormal flux ``G3``.  Systems are collocated: interior nodes carry the
equation and the two boundary planes carry the boundary rows.

Krylov iterations (restarted GMRES from SciPy) are preconditioned by the flat
operator ``-(dz^2 - |k|^2)``, inverted exactly mode by mode.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import IndefiniteOperator, InsufficientHistory, NotConverged
from .fields import Grid
from .geometry import GeometryBundle
from .operators import (
    _ddz_spec,
    div_phi,
    div_raw,
    flat_grad,
    grad_phi,
    grad_tensor,
    lap_phi,
    strain,
)

__all__ = [
    "DIRICHLET_TOP",
    "NEUMANN_TOP",
    "PressureProblem",
    "SolveResult",
    "assemble_rhs",
    "solve",
    "project",
    "bilinear_form",
    "FlatPreconditioner",
]

log = logging.getLogger(__name__)

DIRICHLET_TOP = "dirichlet-top"
NEUMANN_TOP = "neumann-top"


@dataclass
class PressureProblem:
    F: np.ndarray
    G1: np.ndarray | None
    G2: np.ndarray | None
    G3: np.ndarray
    variant: str = DIRICHLET_TOP
    tol: float = 1e-11
    maxiter: int = 10


@dataclass
class SolveResult:
    q: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)


# ----------------------------------------------------------------------
# right-hand sides

def _trace_sq(T):
    return sum(T[i, j] * T[j, i] for i in range(3) for j in range(3))


def assemble_rhs(v: np.ndarray, h: np.ndarray, G: GeometryBundle, *, epsilon: float,
                 sigma: float, gravity: float, variant: str = DIRICHLET_TOP,
                 dv_dt: np.ndarray | None = None, forcing=None, tol: float = 1e-11,
                 T: np.ndarray | None = None, lap_v: np.ndarray | None = None) -> PressureProblem:
    """Data of the pressure problem for the state ``(v, h)``.

    ``forcing`` (optional) is a volume source ``f`` added to the momentum
    equation; it contributes ``-div(P f)`` to ``F`` and ``f . N`` to the flux
    data.  ``dv_dt`` is required for the Neumann-top variant.
    """
    grid = G.grid
    if T is None:
        T = grad_tensor(v, G)
    F = grid.dealias(G.J * _trace_sq(T))
    if forcing is not None:
        F = F - div_raw(forcing, G)
    visc_N = None
    if epsilon > 0:
        if lap_v is None:
            lap_v = lap_phi(v, G)
        visc_N = epsilon * (G.N[0] * lap_v[0] + G.N[1] * lap_v[1] + lap_v[2])
    G3 = np.zeros(grid.sshape) if visc_N is None else grid.dealias(visc_N[0])
    if forcing is not None:
        G3 = G3 + forcing[2][0]
    G1 = G2 = None
    if variant == DIRICHLET_TOP:
        G1 = gravity * h - sigma * G.H
        if epsilon > 0:
            S = strain(v, G, T)
            n = G.n[:, -1]
            Snn = sum(n[i] * S[i, j][-1] * n[j] for i in range(3) for j in range(3))
            G1 = G1 + 2 * epsilon * Snn
        G1 = grid.dealias(G1)
    elif variant == NEUMANN_TOP:
        if dv_dt is None:
            raise InsufficientHistory("the Neumann-top data need dv/dt from history")
        Nt = G.N[:, -1]
        vt = v[:, -1]
        fh = grid.fft(vt)
        ik1, ik2 = grid._ik
        adv = vt[0] * grid.ifft(ik1 * fh) + vt[1] * grid.ifft(ik2 * fh)
        G2 = -sum(Nt[i] * (dv_dt[i][-1] + adv[i]) for i in range(3))
        if visc_N is not None:
            G2 = G2 + visc_N[-1]
        if forcing is not None:
            G2 = G2 + sum(Nt[i] * forcing[i][-1] for i in range(3))
        G2 = grid.dealias(G2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return PressureProblem(F=F, G1=G1, G2=G2, G3=G3, variant=variant, tol=tol)


# ----------------------------------------------------------------------
# preconditioner

class FlatPreconditioner:
    """Exact inverse of the flat collocated operator, mode by mode.

    ``top`` selects the surface row: ``'dirichlet'`` or ``'neumann'``.  With
    a Neumann surface row the zero mode is bordered by a mean constraint and
    a uniform source unknown.
    """

    def __init__(self, grid: Grid, top: str = "dirichlet"):
        self.grid = grid
        self.top = top
        nz = grid.nz
        D, D2 = grid.Dz, grid.D2z
        band = grid.band
        ksq = grid.ksq[band]
        uniq, inv = np.unique(np.round(ksq, 12), return_inverse=True)
        mats = []
        for k2 in uniq:
            M = -D2 + k2 * np.eye(nz)
            M[0] = D[0]
            M[-1] = np.eye(nz)[-1] if top == "dirichlet" else D[-1]
            if top == "neumann" and k2 == 0.0:
                mats.append(None)
                continue
            mats.append(np.linalg.inv(M))
        zero_idx = None
        if top == "neumann":
            zero_idx = int(np.flatnonzero(uniq == 0.0)[0])
            M = -D2.copy()
            M[0] = D[0]
            M[-1] = D[-1]
            B = np.zeros((nz + 1, nz + 1))
            B[:nz, :nz] = M
            B[1:-2, nz] = 1.0
            B[nz, :nz] = grid.wz * grid.dy**2
            self._bordered = np.linalg.inv(B)
            mats[zero_idx] = np.zeros((nz, nz))
        self._Minv = np.stack([mats[i] for i in inv])
        self._zero_pos = None
        if zero_idx is not None:
            self._zero_pos = int(np.flatnonzero(inv == zero_idx)[0])

    def apply(self, r: np.ndarray, rc: float = 0.0):
        grid = self.grid
        R = grid.fft(r)
        Rb = R[:, grid.band]
        Xb = np.einsum("mij,jm->im", self._Minv, Rb)
        c = 0.0
        if self._zero_pos is not None:
            col = np.concatenate([Rb[:, self._zero_pos].real, [rc]])
            sol = self._bordered @ col
            Xb[:, self._zero_pos] = sol[:-1]
            c = float(sol[-1]) / grid.ny**2
        X = np.zeros_like(R)
        X[:, grid.band] = Xb
        return grid.ifft(X), c


class ProjectionPreconditioner:
    """Exact inverse of the flat projection operator, mode by mode.

    Unknowns are ``psi`` on all levels plus a surface field ``a`` (a normal
    velocity correction carried by the surface node alone), stacked as an
    array of shape ``(nz + 1, ny, ny)``.  Rows are the divergence at every
    node and ``psi = 0`` on the surface.  The vertical gradient of ``psi``
    is dropped at the bottom node.  For the zero mode the surface
    divergence row is implied by the others and ``a`` is pinned to zero.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        nz = grid.nz
        D = grid.Dz
        self.shape = (nz + 1,) + grid.sshape
        mask = np.ones(nz)
        mask[0] = 0.0
        DMD = D @ (mask[:, None] * D)
        ksq = grid.ksq[grid.band]
        uniq, inv = np.unique(np.round(ksq, 12), return_inverse=True)
        mats = []
        for k2 in uniq:
            M = np.zeros((nz + 1, nz + 1))
            M[:nz, :nz] = -DMD + k2 * np.eye(nz)
            M[:nz, nz] = -D[:, -1]
            M[nz, nz - 1] = 1.0
            if k2 == 0.0:
                M[nz - 1] = 0.0
                M[nz - 1, nz] = 1.0
            mats.append(np.linalg.inv(M))
        self._Minv = np.stack([mats[i] for i in inv])

    def apply(self, r: np.ndarray) -> np.ndarray:
        grid = self.grid
        R = grid.fft(r)
        Xb = np.einsum("mij,jm->im", self._Minv, R[:, grid.band])
        X = np.zeros_like(R)
        X[:, grid.band] = Xb
        return grid.ifft(X)


_PRECOND_CACHE: dict = {}


def _preconditioner(grid: Grid, top: str):
    key = (grid.L, grid.ny, grid.nz, grid.b, top)
    P = _PRECOND_CACHE.get(key)
    if P is None:
        P = ProjectionPreconditioner(grid) if top == "projection" else FlatPreconditioner(grid, top)
        _PRECOND_CACHE[key] = P
    return P


# ----------------------------------------------------------------------
# collocated operators

def _E_div_flux(q, G):
    """Return ``div(E grad q)`` and the dealiased conormal flux (E grad q)_3."""
    grid = G.grid
    g = flat_grad(q, grid)
    E = G.E
    f1 = grid.fft(E[0, 0] * g[0] + E[0, 2] * g[2]) * grid.band
    f2 = grid.fft(E[1, 1] * g[1] + E[1, 2] * g[2]) * grid.band
    f3 = grid.fft(E[2, 0] * g[0] + E[2, 1] * g[1] + E[2, 2] * g[2]) * grid.band
    ik1, ik2 = grid._ik
    div = grid.ifft(ik1 * f1 + ik2 * f2 + _ddz_spec(grid, f3))
    return div, grid.ifft(f3)


def _pressure_rows(q, G, top):
    if G.flat:
        grid = G.grid
        qh = grid.fft(q)
        lap = grid.ifft(-grid.ksq * qh) + (grid.D2z @ q.reshape(grid.nz, -1)).reshape(q.shape)
        qz = grid.dz(q)
        out = -lap
        out[0] = qz[0]
        out[-1] = q[-1] if top == "dirichlet" else qz[-1]
        return out
    div, flux3 = _E_div_flux(q, G)
    out = -div
    out[0] = flux3[0]
    out[-1] = q[-1] if top == "dirichlet" else flux3[-1]
    return out


def _projection_correction(x, G):
    """Velocity correction for the augmented unknown ``x = (psi, a)``."""
    psi, a = x[:-1], x[-1]
    g = grad_phi(psi, G)
    g[2, 0] = 0.0  # keeps the bottom normal velocity
    Nt = G.N[:, -1]
    g[:, -1] += a * Nt / G.Nabs[-1] ** 2
    return g


def _projection_rows(x, G):
    out = np.empty_like(x)
    out[:-1] = -div_raw(_projection_correction(x, G), G)
    out[-1] = x[-2]
    return out


def bilinear_form(p: np.ndarray, q: np.ndarray, G: GeometryBundle) -> float:
    """Quadrature of ``(E grad p) . grad q`` over the strip."""
    grid = G.grid
    gp = flat_grad(p, grid)
    gq = flat_grad(q, grid)
    E = G.E
    s = sum(E[i, j] * gp[j] * gq[i] for i in range(3) for j in range(3))
    return grid.integrate(s)


# ----------------------------------------------------------------------
# Krylov driver

def _emit(stats, verbose):
    if verbose:
        sys.stderr.write(json.dumps(stats) + "\n")


def _krylov(apply_rows, rhs, precond, x0, tol, maxiter, aug=False, verbose=False, label=""):
    grid = precond.grid
    shape = grid.vshape
    n = int(np.prod(shape)) + (1 if aug else 0)

    def unpack(x):
        if aug:
            return x[:-1].reshape(shape), x[-1]
        return x.reshape(shape), 0.0

    def matvec(x):
        q, c = unpack(x)
        rows, extra = apply_rows(q, c)
        return np.concatenate([rows.ravel(), [extra]]) if aug else rows.ravel()

    def psolve(r):
        rq, rc = unpack(r)
        z, c = precond.apply(rq, rc)
        return np.concatenate([z.ravel(), [c]]) if aug else z.ravel()

    # left preconditioning by hand: residuals are then measured in the scale
    # of the unknown, away from the roundoff floor of the raw collocation rows
    A = LinearOperator((n, n), matvec=lambda x: psolve(matvec(x)), dtype=float)
    b = psolve(rhs)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0, []
    history = []

    def cb(res):
        history.append(float(res))

    x, info = gmres(A, b, x0=x0, rtol=tol, atol=0.0, restart=40, maxiter=maxiter,
                    callback=cb, callback_type="pr_norm")
    res = float(np.linalg.norm(b - A.matvec(x))) / bnorm
    its = len(history)
    _emit({"solve": label, "iterations": its, "residual": res}, verbose)
    if not np.all(np.isfinite(x)):
        raise IndefiniteOperator(f"{label}: non-finite iterate; geometry is corrupted")
    if res > max(tol * 10.0, 1e-14) or info < 0:
        raise NotConverged(f"{label}: relative residual {res:.3e} after {its} iterations",
                           x=unpack(x)[0], residual=res)
    return x, its, res, history


def _krylov_right(apply_rows, rhs, precond, x0, atol, maxiter, verbose=False, label=""):
    """Right-preconditioned GMRES on the raw rows; stops on the unscaled
    residual norm ``atol`` and raises ``NotConverged`` only when the final
    residual is 100 times the target."""
    shape = precond.shape
    n = int(np.prod(shape))

    def Minv(r):
        return precond.apply(r.reshape(shape)).ravel()

    def matvec(x):
        return apply_rows(x.reshape(shape)).ravel()

    x = np.zeros(n) if x0 is None else x0.ravel().copy()
    r0 = rhs - matvec(x) if x0 is not None else rhs.copy()
    history = []
    if np.linalg.norm(r0) > atol:
        A = LinearOperator((n, n), matvec=lambda y: matvec(Minv(y)), dtype=float)
        y, info = gmres(A, r0, rtol=0.0, atol=atol, restart=40, maxiter=maxiter,
                        callback=lambda r: history.append(float(r)), callback_type="pr_norm")
        x = x + Minv(y)
    res = float(np.linalg.norm(rhs - matvec(x)))
    _emit({"solve": label, "iterations": len(history), "residual": res}, verbose)
    if not np.all(np.isfinite(x)):
        raise IndefiniteOperator(f"{label}: non-finite iterate; geometry is corrupted")
    if res > 100.0 * atol:
        raise NotConverged(f"{label}: residual {res:.3e} above {atol:.3e}",
                           x=x.reshape(shape), residual=res)
    return x.reshape(shape), len(history), res, history


def _check_positive(G):
    if float(G.J.min()) <= 0.0:
        raise IndefiniteOperator("dz(phi) is not positive; E has lost definiteness")


def solve(prob: PressureProblem, G: GeometryBundle, x0: np.ndarray | None = None,
          verbose: bool = False) -> SolveResult:
    """Solve the collocated pressure problem.

    Dirichlet-top: ``q = G1`` on the surface, ``(E grad q)_3 = G3`` at the
    bottom.  Neumann-top: both planes carry fluxes; the solution has zero
    volume mean and ``F`` is shifted by a constant to make the data
    compatible.
    """
    _check_positive(G)
    grid = G.grid
    # data outside the 2/3 band cannot be matched by band-limited iterates
    rhs = grid.dealias(prob.F)
    rhs[0] = grid.dealias(prob.G3)
    if prob.variant == DIRICHLET_TOP:
        rhs[-1] = grid.dealias(prob.G1)
        P = _preconditioner(grid, "dirichlet")
        if G.flat and x0 is None:
            q, _ = P.apply(rhs)
            return SolveResult(q=q, iterations=0, residual=0.0)

        def rows(q, c):
            return _pressure_rows(q, G, "dirichlet"), 0.0

        x, its, res, hist = _krylov(rows, rhs.ravel(), P, None if x0 is None else x0.ravel(),
                                    prob.tol, prob.maxiter, verbose=verbose, label="pressure")
        return SolveResult(q=x.reshape(grid.vshape), iterations=its, residual=res, history=hist)

    if prob.variant != NEUMANN_TOP:
        raise ValueError(f"unknown variant {prob.variant!r}")
    rhs[-1] = grid.dealias(prob.G2)
    P = _preconditioner(grid, "neumann")
    interior = np.zeros(grid.vshape)
    interior[1:-1] = 1.0

    def rows_n(q, c):
        r = _pressure_rows(q, G, "neumann") + c * interior
        return r, grid.integrate(q)

    b = np.concatenate([rhs.ravel(), [0.0]])
    x, its, res, hist = _krylov(rows_n, b, P, None, prob.tol, prob.maxiter, aug=True,
                                verbose=verbose, label="pressure-neumann")
    q = x[:-1].reshape(grid.vshape)
    return SolveResult(q=q, iterations=its, residual=res, history=hist)


def project(v: np.ndarray, G: GeometryBundle, tol: float = 1e-12, verbose: bool = False,
            x0: np.ndarray | None = None, atol: float | None = None):
    """Remove the transformed-divergent part of ``v``.

    Returns ``(v_df, x)``.  The correction is ``grad_phi(psi)`` with
    ``psi = 0`` on the surface, its vertical component dropped at the bottom
    node (the bottom normal velocity is untouched), plus a normal velocity
    ``a N / |N|^2`` at the surface nodes only.  ``x`` stacks ``psi`` and
    ``a``.  ``v_df`` is divergence free at every node up to the solver
    tolerance: ``tol`` relative to ``max|v|`` or, when given, the absolute
    level ``atol``.  ``a`` is of the size of the vertical truncation error.
    """
    _check_positive(G)
    grid = G.grid
    rhs = np.zeros((grid.nz + 1,) + grid.sshape)
    rhs[:-1] = -div_raw(v, G)
    scale = max(float(np.abs(v).max()), 1e-300)
    if float(np.abs(rhs).max()) <= 1e-3 * (tol * scale if atol is None else atol):
        return v.copy(), np.zeros_like(rhs)
    P = _preconditioner(grid, "projection")
    if G.flat:
        x = P.apply(rhs)
    else:
        # the divergence itself is the residual; GMRES cannot go much below
        # 1e-11 of the initial one
        target = tol * scale if atol is None else atol
        target = max(target * np.sqrt(rhs.size), 1e-11 * float(np.linalg.norm(rhs)))
        x, _, _, _ = _krylov_right(lambda y: _projection_rows(y, G), rhs.ravel(), P, x0,
                                   target, 10, verbose=verbose, label="projection")
    return v - _projection_correction(x, G), x
