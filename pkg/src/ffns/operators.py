"""
Differential calculus in flattened coordinates.

With ``J = dz(phi)`` the transformed derivatives are::

    d_i^phi = d_i - (d_i phi / J) dz     (i = t, 1, 2)
    d_3^phi = (1 / J) dz

Divergence and Laplacian are evaluated in divergence form through the
matrices ``P`` and ``E = P P^T / J``.  Every product with a geometric
coefficient is projected onto the 2/3 band.  When the geometry is flat the
plain Cartesian operators are used directly.
"""
from __future__ import annotations

import numpy as np

from .geometry import GeometryBundle

__all__ = [
    "dphi",
    "grad_phi",
    "div_phi",
    "div_raw",
    "lap_phi",
    "grad_tensor",
    "strain",
    "vorticity",
    "transport_split",
    "flat_grad",
    "flat_div",
    "flat_lap",
]


def _ddz_spec(grid, fh):
    # vertical collocation derivative of spectral coefficients (axis -3)
    shp = fh.shape
    return (grid.Dz @ fh.reshape(shp[:-2] + (-1,))).reshape(shp)


def flat_grad(f, grid):
    fh = grid.fft(f)
    ik1, ik2 = grid._ik
    return np.stack([grid.ifft(ik1 * fh), grid.ifft(ik2 * fh), grid.dz(f)])


def flat_div(v, grid):
    ik1, ik2 = grid._ik
    s = ik1 * grid.fft(v[0]) + ik2 * grid.fft(v[1])
    return grid.ifft(s) + grid.dz(v[2])


def flat_lap(f, grid):
    fh = grid.fft(f)
    return grid.ifft(-grid.ksq * fh) + (grid.D2z @ f.reshape(f.shape[:-2] + (-1,))).reshape(f.shape)


def dphi(f: np.ndarray, G: GeometryBundle, i, df_dt: np.ndarray | None = None) -> np.ndarray:
    """Transformed partial derivative of ``f`` in direction ``i``.

    ``i`` is one of ``'t', 1, 2, 3`` (``'z'`` is accepted for 3).  For the time
    direction the caller supplies ``df_dt``.
    """
    grid = G.grid
    fz = grid.dz(f)
    if i in (3, "z"):
        if G.flat:
            return fz
        return grid.dealias(fz * G.invJ)
    if i == "t":
        if df_dt is None:
            raise ValueError("time direction needs df_dt")
        base, coef = df_dt, G.dtphi
    elif i in (1, 2):
        base, coef = grid.dx(f, i), G.dphi(i)
    else:
        raise ValueError(f"unknown direction {i!r}")
    if G.flat:
        return base
    return grid.dealias(base - coef * G.invJ * fz)


def grad_phi(f: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """(1/J) P^T grad f.  A leading batch axis on ``f`` is kept after the
    component axis: output shape is ``(3,) + f.shape``."""
    grid = G.grid
    g = flat_grad(f, grid)
    if G.flat:
        return g
    fz = g[2] * G.invJ
    out = np.stack([g[0] - G.d1phi * fz, g[1] - G.d2phi * fz, fz])
    return grid.dealias(out)


def div_raw(v: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """div(P v), band-limited: ``J`` times the transformed divergence."""
    grid = G.grid
    if G.flat:
        return flat_div(v, grid)
    J = G.J
    flux3 = v[2] - G.d1phi * v[0] - G.d2phi * v[1]
    ik1, ik2 = grid._ik
    s = ik1 * grid.fft(J * v[0]) + ik2 * grid.fft(J * v[1]) + _ddz_spec(grid, grid.fft(flux3))
    return grid.ifft(s * grid.band)


def div_phi(v: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """(1/J) div(P v) for a vector field (leading component axis)."""
    if G.flat:
        return flat_div(v, G.grid)
    return G.grid.dealias(G.invJ * div_raw(v, G))


def _flux_E(g, G):
    E = G.E
    return np.stack([
        E[0, 0] * g[0] + E[0, 2] * g[2],
        E[1, 1] * g[1] + E[1, 2] * g[2],
        E[2, 0] * g[0] + E[2, 1] * g[1] + E[2, 2] * g[2],
    ])


def lap_phi(f: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """(1/J) div(E grad f), the canonical transformed Laplacian."""
    grid = G.grid
    if G.flat:
        return flat_lap(f, grid)
    q = _flux_E(flat_grad(f, grid), G)
    ik1, ik2 = grid._ik
    s = ik1 * grid.fft(q[0]) + ik2 * grid.fft(q[1]) + _ddz_spec(grid, grid.fft(q[2]))
    return grid.dealias(G.invJ * grid.ifft(s * grid.band))


def E_flux_normal(f: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """Third component of E grad f, dealiased (the conormal flux)."""
    grid = G.grid
    g = flat_grad(f, grid)
    if G.flat:
        return g[2]
    E = G.E
    return grid.dealias(E[2, 0] * g[0] + E[2, 1] * g[1] + E[2, 2] * g[2])


def grad_tensor(v: np.ndarray, G: GeometryBundle) -> np.ndarray:
    """T[i, j] = d_j^phi v_i evaluated nodewise, shape ``(3, 3) + vshape``.

    No band projection is applied: boundary conditions are imposed on these
    nodal values, and products built from them are projected where they
    enter the dynamics.
    """
    grid = G.grid
    g = flat_grad(v, grid)  # g[j, i] = d_j v_i
    if not G.flat:
        fz = g[2] * G.invJ
        g = np.stack([g[0] - G.d1phi * fz, g[1] - G.d2phi * fz, fz])
    return np.swapaxes(g, 0, 1)


def strain(v: np.ndarray, G: GeometryBundle, T: np.ndarray | None = None) -> np.ndarray:
    """Symmetric part of the transformed velocity gradient."""
    if T is None:
        T = grad_tensor(v, G)
    S = np.empty_like(T)
    for i in range(3):
        S[i, i] = T[i, i]
        for j in range(i + 1, 3):
            S[i, j] = S[j, i] = 0.5 * (T[i, j] + T[j, i])
    return S


def vorticity(v: np.ndarray, G: GeometryBundle, T: np.ndarray | None = None) -> np.ndarray:
    if T is None:
        T = grad_tensor(v, G)
    return np.stack([T[2, 1] - T[1, 2], T[0, 2] - T[2, 0], T[1, 0] - T[0, 1]])


def transport_split(v: np.ndarray, G: GeometryBundle):
    """Return ``V_z`` and the advection map ``f -> v_y . grad_y f + V_z dz f``.

    ``V_z = (v . N - dt(eta)) / J``; the advection map accepts scalar or
    batched fields.
    """
    grid = G.grid
    vN = G.N[0] * v[0] + G.N[1] * v[1] + v[2]
    Vz = grid.dealias((vN - G.dtphi) * G.invJ)

    def advect(f):
        fh = grid.fft(f)
        ik1, ik2 = grid._ik
        out = v[0] * grid.ifft(ik1 * fh) + v[1] * grid.ifft(ik2 * fh) + Vz * grid.dz(f)
        return grid.dealias(out)

    return Vz, advect
