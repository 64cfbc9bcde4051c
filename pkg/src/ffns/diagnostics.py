"""
Energy budget, conormal norms and boundary monitors.

The energy bracket used throughout is

    B = int |v|^2 dV_t + g int h^2 + 2 sigma int (sqrt(1 + |grad h|^2) - 1)

with ``dV_t = dz(phi) dy dz``; along smooth solutions
``1/2 dB/dt + 2 eps int |S v|^2 dV_t + 2 kappa eps int_bottom |v|^2 = 0``.
Records store ``E = B / 2`` split into its three parts.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .errors import InsufficientHistory
from .fields import Grid, conormal_derivative, time_derivative_from_history
from .geometry import GeometryBundle, build_geometry, extend_height, surface_energy_density
from .operators import div_phi, strain

__all__ = [
    "NormSpec",
    "DiagnosticsRecord",
    "energy_terms",
    "dissipation_terms",
    "energy_balance",
    "integrated_residual",
    "conormal_norm",
    "cutoff",
    "sn_field",
    "boundary_sn_max",
    "good_unknown",
    "taylor_margin",
    "diffeo_margin",
    "record",
    "write_records_csv",
]


# ----------------------------------------------------------------------
# energy

def energy_terms(v: np.ndarray, h: np.ndarray, G: GeometryBundle, gravity: float,
                 sigma: float) -> tuple[float, float, float]:
    """Kinetic, gravity and capillary parts of ``E = B / 2``."""
    grid = G.grid
    kin = 0.5 * grid.integrate(np.sum(v * v, axis=0) * G.J)
    grav = 0.5 * gravity * grid.integrate_surface(h * h)
    cap = sigma * grid.integrate_surface(surface_energy_density(h, grid))
    return kin, grav, cap


def dissipation_terms(v: np.ndarray, G: GeometryBundle, epsilon: float,
                      kappa: float) -> tuple[float, float]:
    """``2 eps int |S v|^2 dV_t`` and ``2 kappa eps int_bottom |v|^2``."""
    if epsilon == 0.0:
        return 0.0, 0.0
    grid = G.grid
    S = strain(v, G)
    visc = 2.0 * epsilon * grid.integrate(np.sum(S * S, axis=(0, 1)) * G.J)
    fric = 2.0 * kappa * epsilon * grid.integrate_surface(np.sum(v[:, 0] ** 2, axis=0))
    return visc, fric


def _series(records, t=None):
    if t is None:
        t = np.array([r.t for r in records], dtype=float)
        E = np.array([r.kinetic + r.gravity_energy + r.capillary_energy for r in records])
        D = np.array([r.dissipation + r.friction for r in records])
    else:
        E, D = (np.asarray(a, dtype=float) for a in records)
        t = np.asarray(t, dtype=float)
    if t.size < 3:
        raise InsufficientHistory(f"the energy balance needs 3 records, got {t.size}")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("records are not uniformly spaced in time")
    return t, E, D


def energy_balance(records, t=None) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise residual ``dE/dt + D`` at interior records, normalised by
    the initial energy.

    ``records`` is a sequence of :class:`DiagnosticsRecord`, or a pair
    ``(E, D)`` of arrays when ``t`` is given.  Returns ``(t_mid, residual)``.
    """
    t, E, D = _series(records, t)
    dE = (E[2:] - E[:-2]) / (t[2:] - t[:-2])
    scale = abs(E[0]) if E[0] != 0 else 1.0
    return t[1:-1], (dE + D[1:-1]) / scale


def integrated_residual(records, t=None) -> float:
    """``(E(T) - E(0) + int_0^T D dt) / E(0)``; the time integral uses
    composite Simpson weights."""
    t, E, D = _series(records, t)
    scale = abs(E[0]) if E[0] != 0 else 1.0
    return float((E[-1] - E[0] + simpson(D, x=t)) / scale)


# ----------------------------------------------------------------------
# conormal norms

KINDS = ("volume-conormal", "volume-sup", "surface", "surface-sup")


@dataclass(frozen=True)
class NormSpec:
    """``kind`` is one of ``volume-conormal``, ``volume-sup``, ``surface``,
    ``surface-sup``; ``m`` counts time plus conormal derivatives, ``k``
    adds tangential orders and ``s`` is a fractional horizontal index."""

    kind: str
    m: int = 0
    k: int = 0
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0 <= self.m <= 3:
            raise ValueError("m must lie in 0..3")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if abs(2 * self.s - round(2 * self.s)) > 1e-12:
            raise ValueError("s must be a multiple of 1/2")

    @property
    def label(self) -> str:
        return f"{self.kind}:m{self.m}k{self.k}s{self.s:g}"


def _lambda_s(f, grid, s):
    if s == 0:
        return f
    return grid.multiplier(f, (1.0 + grid.ksq) ** (0.5 * s))


def _multi_indices(order, dims):
    for r in range(order + 1):
        yield from itertools.combinations_with_replacement(dims, r)


def _apply_Z(f, grid, alpha, surface):
    for i in alpha:
        f = grid.dx(f, i) if surface or i != 3 else conormal_derivative(f, grid, 3)
    return f


def _norm(f, grid, sup, surface):
    if sup:
        return float(np.abs(f).max())
    # vector fields carry a leading component axis
    sq = np.sum(f * f, axis=0) if f.ndim == (3 if surface else 4) else f * f
    if surface:
        return float(np.sqrt(np.sum(sq) * grid.dy**2))
    return float(np.sqrt(grid.integrate(sq)))


def conormal_norm(history: Sequence, spec: NormSpec, grid: Grid | None = None,
                  field: str = "v", dt: float | None = None) -> float:
    """Space-time conormal norm of one field of ``history``.

    ``history`` is ordered oldest to newest; entries are arrays or objects
    with attributes ``v``, ``h``, ``q`` and ``t``.  Time derivatives of
    order ``l`` are backward differences over the newest ``l + 2`` entries.

    Raises
    ------
    InsufficientHistory
        When the history is too short for ``spec.m``.
    """
    entries = list(history)
    if not entries:
        raise InsufficientHistory("empty history")
    if isinstance(entries[0], np.ndarray):
        ring = entries
        if dt is None and len(ring) > 1:
            raise ValueError("dt is required for a history of bare arrays")
    else:
        ring = [np.asarray(getattr(e, field)) for e in entries]
        if len(entries) > 1 and dt is None:
            dt = float(entries[-1].t - entries[-2].t)
    if grid is None:
        raise ValueError("a grid is required")
    surface = spec.kind.startswith("surface")
    sup = spec.kind.endswith("sup")
    dims = (1, 2) if surface else (1, 2, 3)
    total = 0.0
    for ell in range(spec.m + 1):
        if ell > 0 and len(ring) < ell + 2:
            raise InsufficientHistory(
                f"order {ell} in time needs {ell + 2} snapshots, history holds {len(ring)}")
        f = time_derivative_from_history(ring, ell, dt if ell else 1.0)
        if surface and f.shape[-2:] == grid.sshape and f.ndim >= 3 and f.shape[-3] == grid.nz:
            f = f[..., -1, :, :]
        for alpha in _multi_indices(spec.m + spec.k - ell, dims):
            g = _apply_Z(f, grid, alpha, surface)
            if not sup:
                g = _lambda_s(g, grid, spec.s)
            total += _norm(g, grid, sup, surface)
    return total


# ----------------------------------------------------------------------
# boundary monitors

def cutoff(grid: Grid) -> np.ndarray:
    """Quintic smoothstep: 1 on [-b, -2b/3], 0 on [-b/3, 0]."""
    b = grid.b
    s = np.clip((grid.z + 2.0 * b / 3.0) / (b / 3.0), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def sn_field(v: np.ndarray, G: GeometryBundle, kappa: float) -> np.ndarray:
    """``Pi (S v n - kappa chi v)`` at every node."""
    S = strain(v, G)
    chi = cutoff(G.grid)[:, None, None]
    Sn = np.einsum("ij...,j...->i...", S, G.n) - kappa * chi * v
    return np.einsum("ij...,j...->i...", G.Pi, Sn)


def boundary_sn_max(v: np.ndarray, G: GeometryBundle, kappa: float) -> float:
    Sn = sn_field(v, G, kappa)
    return float(max(np.abs(Sn[:, 0]).max(), np.abs(Sn[:, -1]).max()))


def taylor_margin(q: np.ndarray, G: GeometryBundle, gravity: float) -> float:
    """min over surface nodes of ``g - d_z^phi q``."""
    qz = G.grid.dz(q)[-1] / G.J[-1]
    return float(np.min(gravity - qz))


def diffeo_margin(G: GeometryBundle) -> float:
    """min of ``dz(phi)`` over the volume."""
    return float(G.J.min())


# ----------------------------------------------------------------------
# good unknowns

def good_unknown(v: np.ndarray, q: np.ndarray, G: GeometryBundle, direction,
                 history: Sequence | None = None, dt: float | None = None):
    """First-order good unknowns ``V = Z v - d_z^phi v Z eta`` and
    ``Q = Z q - d_z^phi q Z eta``.

    ``direction`` is 1, 2, 3 or ``'t'``.  The time direction differences
    ``v``, ``q`` and ``h`` over the newest three entries of ``history``.
    """
    grid = G.grid
    if direction == "t":
        if history is None or len(history) < 3:
            raise InsufficientHistory("the time direction needs three history entries")
        if dt is None:
            dt = float(history[-1].t - history[-2].t)
        Zv = time_derivative_from_history([e.v for e in history], 1, dt)
        Zq = time_derivative_from_history([e.q for e in history], 1, dt)
        dh = time_derivative_from_history([e.h for e in history], 1, dt)
        Zeta = extend_height(dh, G.A, grid)
    elif direction in (1, 2, 3):
        Zv = conormal_derivative(v, grid, direction)
        Zq = conormal_derivative(q, grid, direction)
        Zeta = conormal_derivative(G.eta, grid, direction)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    vz = grid.dz(v) * G.invJ
    qz = grid.dz(q) * G.invJ
    return Zv - vz * Zeta, Zq - qz * Zeta


# ----------------------------------------------------------------------
# records

@dataclass
class DiagnosticsRecord:
    t: float
    kinetic: float
    gravity_energy: float
    capillary_energy: float
    dissipation: float
    friction: float
    residual: float
    min_dzphi: float
    taylor_margin: float
    norms: dict = field(default_factory=dict)
    div_max: float = 0.0
    sn_max: float = 0.0

    @property
    def energy(self) -> float:
        return self.kinetic + self.gravity_energy + self.capillary_energy

    def row(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "norms":
                for key, val in self.norms.items():
                    out[f"norm[{key}]"] = val
            else:
                out[f.name] = getattr(self, f.name)
        return out


def record(state, params, norm_specs: Sequence[NormSpec] = (), residual: float = float("nan"),
           G: GeometryBundle | None = None) -> DiagnosticsRecord:
    """Evaluate every monitor on a :class:`~ffns.stepper.FlowState`."""
    grid = params.grid
    if G is None:
        G = build_geometry(state.h, None, state.A, grid, params.c0, check=False)
    kin, grav, cap = energy_terms(state.v, state.h, G, params.gravity, params.sigma)
    visc, fric = dissipation_terms(state.v, G, params.epsilon, params.kappa)
    norms = {}
    for spec in norm_specs:
        try:
            norms[spec.label] = conormal_norm(state.history, spec, grid)
        except InsufficientHistory:
            norms[spec.label] = float("nan")
    sn = boundary_sn_max(state.v, G, params.kappa)
    return DiagnosticsRecord(
        t=float(state.t), kinetic=kin, gravity_energy=grav, capillary_energy=cap,
        dissipation=visc, friction=fric, residual=residual, min_dzphi=diffeo_margin(G),
        taylor_margin=taylor_margin(state.q, G, params.gravity), norms=norms,
        div_max=float(np.abs(div_phi(state.v, G)).max()), sn_max=sn,
    )


def write_records_csv(path, records: Sequence[DiagnosticsRecord]) -> None:
    rows = [r.row() for r in records]
    if not rows:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) for k, v in row.items()})
