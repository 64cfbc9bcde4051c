"""
Manufactured solutions.

The exact velocity is built from a flux ``W = curl(psi)`` that is
divergence free in the flat strip; ``v = P^{-1} W`` is then transformed
divergence free for the geometry of the exact height.  All source terms
are evaluated with the same discrete operators the solver uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import build_geometry
from .operators import grad_phi, lap_phi, strain, transport_split
from .stepper import Forcing, SimParams, _top_strain_normal

__all__ = ["ManufacturedSolution", "ExactState"]


@dataclass(frozen=True, eq=False)
class ExactState:
    v: np.ndarray
    h: np.ndarray
    q: np.ndarray
    dv_dt: np.ndarray
    dh_dt: np.ndarray
    G: object


class ManufacturedSolution(Forcing):
    """Travelling surface ``h = a cos(y1 - t) + a/2 sin(y2)`` with a
    rotating vortical flow and a smooth pressure.

    ``A`` is the extension rate; it must equal the one selected by
    :func:`~ffns.stepper.project_initial_data` for ``h(0)``, which
    :meth:`bind` fixes after initialisation.
    """

    def __init__(self, params: SimParams, amp_h: float = 0.05, amp_v: float = 0.05,
                 amp_q: float = 0.05, A: float | None = None):
        self.params = params
        self.amp_h, self.amp_v, self.amp_q = amp_h, amp_v, amp_q
        self.A = A
        self._exact = lru_cache(maxsize=16)(self._build)

    def bind(self, A: float) -> "ManufacturedSolution":
        self.A = float(A)
        self._exact.cache_clear()
        return self

    # -- closed-form pieces ------------------------------------------------
    def height(self, t):
        g = self.params.grid
        y1, y2 = g.Y
        a = self.amp_h
        h = a * np.cos(y1 - t) + 0.5 * a * np.sin(y2)
        dh = a * np.sin(y1 - t)
        return h, dh

    def _flux(self, t):
        g = self.params.grid
        y1, y2 = g.Y
        s = (g.Z + g.b)
        beta = self.amp_v
        c1, dc1 = np.cos(t), -np.sin(t)
        s2, ds2 = np.sin(t + 1.0), np.cos(t + 1.0)
        cy1, sy1 = np.cos(y1)[None], np.sin(y1)[None]
        cy2, sy2 = np.cos(y2)[None], np.sin(y2)[None]
        # psi1 = beta s^2 sin(y2) c1(t), psi2 = beta s^2 cos(y1) s2(t)
        W = np.stack([
            -2 * beta * s * cy1 * s2,
            2 * beta * s * sy2 * c1,
            -beta * s**2 * (sy1 * s2 + cy2 * c1),
        ])
        dW = np.stack([
            -2 * beta * s * cy1 * ds2,
            2 * beta * s * sy2 * dc1,
            -beta * s**2 * (sy1 * ds2 + cy2 * dc1),
        ])
        return W, dW

    def _pressure(self, t):
        g = self.params.grid
        y1, y2 = g.Y
        return self.amp_q * (1.0 + g.Z / g.b) * np.sin(y1 + y2 + t)[None]

    def _build(self, t):
        if self.A is None:
            raise RuntimeError("call bind(A) before evaluating the manufactured solution")
        p = self.params
        grid = p.grid
        h, dh = self.height(t)
        G = build_geometry(h, dh, self.A, grid, p.c0)
        W, dW = self._flux(t)
        J, d1, d2 = G.J, G.d1phi, G.d2phi
        v1, v2 = W[0] / J, W[1] / J
        v = np.stack([v1, v2, W[2] + d1 * v1 + d2 * v2])
        eta_t = G.dtphi
        Jt = grid.dz(eta_t)
        d1t, d2t = grid.dx(eta_t, 1), grid.dx(eta_t, 2)
        d1t[0] = 0.0
        d2t[0] = 0.0
        v1t = (dW[0] - v1 * Jt) / J
        v2t = (dW[1] - v2 * Jt) / J
        vt = np.stack([v1t, v2t, dW[2] + d1t * v1 + d1 * v1t + d2t * v2 + d2 * v2t])
        return ExactState(v=v, h=h, q=self._pressure(t), dv_dt=vt, dh_dt=dh, G=G)

    def exact(self, t: float) -> ExactState:
        return self._exact(float(t))

    # -- forcing hooks ----------------------------------------------------
    def volume(self, t, G=None):
        ex = self.exact(t)
        p = self.params
        _, advect = transport_split(ex.v, ex.G)
        f = ex.dv_dt + advect(ex.v) + grad_phi(ex.q, ex.G)
        if p.epsilon > 0:
            f = f - p.epsilon * lap_phi(ex.v, ex.G)
        return f

    def kinematic(self, t, G=None):
        ex = self.exact(t)
        N = ex.G.N[:, -1]
        vN = N[0] * ex.v[0, -1] + N[1] * ex.v[1, -1] + ex.v[2, -1]
        return ex.dh_dt - self.params.grid.dealias(vN)

    def top_pressure(self, t, G=None):
        ex = self.exact(t)
        p = self.params
        g1 = p.gravity * ex.h - p.sigma * ex.G.H
        if p.epsilon > 0:
            S = strain(ex.v, ex.G)
            n = ex.G.n[:, -1]
            g1 = g1 + 2 * p.epsilon * sum(n[i] * S[i, j][-1] * n[j]
                                          for i in range(3) for j in range(3))
        return ex.q[-1] - p.grid.dealias(g1)

    def top_stress(self, t, G=None):
        ex = self.exact(t)
        vz = ex.G.grid.dz(ex.v)[:, -1]
        return _top_strain_normal(ex.v[:, -1], vz, ex.G)

    def bottom_stress(self, t, G=None):
        ex = self.exact(t)
        grid = ex.G.grid
        vz = grid.dz(ex.v[:2])[:, 0]
        g1, g2 = grid.grad_h(ex.v[2, 0])
        S3 = np.stack([0.5 * (vz[0] / ex.G.J[0] + g1), 0.5 * (vz[1] / ex.G.J[0] + g2)])
        return S3 - self.params.kappa * ex.v[:2, 0]

    # -- errors -------------------------------------------------------------
    def error(self, state) -> float:
        """max-norm distance of ``(v, h)`` from the exact solution at ``state.t``."""
        ex = self.exact(state.t)
        return float(max(np.abs(state.v - ex.v).max(), np.abs(state.h - ex.h).max()))
