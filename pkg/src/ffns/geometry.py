"""
Flattening map and derived geometric data.

The fluid domain ``{-b < x3 < h(t, y)}`` is pulled back to the fixed strip
``[0,L)^2 x [-b, 0]`` through ``phi = z + eta`` where ``eta`` is the smoothing
extension of ``h``::

    eta_hat(xi, z) = (1 + z/b) * exp(A |xi| z) * h_hat(xi)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChartFolds, DiffeoViolated, NoAdmissibleA, SurfaceTouchesBottom
from .fields import Grid

__all__ = [
    "GeometryBundle",
    "extension_factor",
    "extend_height",
    "choose_A",
    "lift_slope_max",
    "build_geometry",
    "flat_geometry",
    "mean_curvature",
    "surface_energy_density",
    "GeodesicChart",
    "geodesic_chart",
    "chart_w3_top",
]


def extension_factor(grid: Grid, A: float) -> tuple[np.ndarray, np.ndarray]:
    """Modewise multipliers of the extension and of its z-derivative.

    Returns arrays of shape ``(nz, ny, ny//2+1)``.
    """
    z = grid.z[:, None, None]
    b = grid.b
    k = grid.kabs[None]
    ex = np.exp(A * k * z)
    lin = 1.0 + z / b
    return lin * ex, (1.0 / b + lin * A * k) * ex


def extend_height(h: np.ndarray, A: float, grid: Grid) -> np.ndarray:
    """Extend a surface field into the strip; exact on both planes."""
    if not (A > 0 and grid.b > 0):
        raise ValueError("A and b must be positive")
    fac, _ = extension_factor(grid, A)
    eta = grid.ifft(fac * grid.fft(h)[None])
    eta[-1] = h
    eta[0] = 0.0
    return eta


def _dz_phi(h: np.ndarray, A: float, grid: Grid) -> np.ndarray:
    _, dfac = extension_factor(grid, A)
    return 1.0 + grid.ifft(dfac * grid.fft(h)[None])


def choose_A(h0: np.ndarray, grid: Grid, A_max: float = 1.0, levels: int = 40) -> tuple[float, float]:
    """Largest A on the lattice ``A_max * 2**-j`` keeping dz(phi) above
    ``(1 + min(h0)/b) / 2`` at every node.

    Returns
    -------
    A, margin
        The selected rate and ``min dz(phi) - (1 + min h0/b)/2``.
    """
    b = grid.b
    hmin = float(np.min(h0))
    if hmin <= -b:
        raise SurfaceTouchesBottom(f"min(h0) = {hmin} reaches the bottom z = {-b}")
    if not A_max > 0:
        raise ValueError("A_max must be positive")
    floor = 0.5 * (1.0 + hmin / b)
    lattice = A_max * 0.5 ** np.arange(levels + 1)

    def margin(A):
        return float(np.min(_dz_phi(h0, A, grid))) - floor

    if margin(lattice[0]) >= 0:
        return float(lattice[0]), margin(lattice[0])
    # bracket a passing index by doubling, then bisect on the lattice index
    bad, j = 0, 1
    while margin(lattice[j]) < 0:
        if j == levels:
            raise NoAdmissibleA("no lattice value of A keeps dz(phi) above the floor; refine h0")
        bad, j = j, min(2 * j, levels)
    good = j
    while good - bad > 1:
        mid = (good + bad) // 2
        if margin(lattice[mid]) >= 0:
            good = mid
        else:
            bad = mid
    A = float(lattice[good])
    return A, margin(A)


def lift_slope_max(h: np.ndarray, A: float, grid: Grid) -> float:
    """``max |dz zeta|`` for the exponential factor ``zeta_hat = exp(A|xi|z) h_hat``
    of the extension (``eta = (1 + z/b) zeta``), evaluated modewise."""
    z = grid.z[:, None, None]
    k = grid.kabs[None]
    dzeta = grid.ifft(A * k * np.exp(A * k * z) * grid.fft(h)[None])
    return float(np.abs(dzeta).max())


def mean_curvature(h: np.ndarray, grid: Grid) -> np.ndarray:
    """H = div(grad h / sqrt(1 + |grad h|^2)), dealiased."""
    h1, h2 = grid.grad_h(h)
    w = 1.0 / np.sqrt(1.0 + h1**2 + h2**2)
    f1 = grid.fft(h1 * w) * grid.band
    f2 = grid.fft(h2 * w) * grid.band
    ik1, ik2 = grid._ik
    return grid.ifft(ik1 * f1 + ik2 * f2)


def surface_energy_density(h: np.ndarray, grid: Grid) -> np.ndarray:
    """sqrt(1 + |grad h|^2) - 1, written to avoid cancellation."""
    h1, h2 = grid.grad_h(h)
    s = h1**2 + h2**2
    return s / (1.0 + np.sqrt(1.0 + s))


@dataclass(frozen=True, eq=False)
class GeometryBundle:
    """All flattening data at one instant.

    Volume arrays have shape ``grid.vshape``; ``N`` and ``n`` are vector
    fields; ``Pi``, ``P`` and ``E`` are ``(3, 3) + vshape`` tensors.
    """

    grid: Grid
    A: float
    c0: float
    h: np.ndarray
    dh_dt: np.ndarray
    eta: np.ndarray
    d1phi: np.ndarray
    d2phi: np.ndarray
    J: np.ndarray
    invJ: np.ndarray
    dtphi: np.ndarray
    N: np.ndarray
    Nabs: np.ndarray
    n: np.ndarray
    Pi: np.ndarray
    P: np.ndarray
    E: np.ndarray
    H: np.ndarray
    flat: bool

    @property
    def phi(self) -> np.ndarray:
        return self.grid.Z + self.eta

    @property
    def dzphi(self) -> np.ndarray:
        return self.J

    def dphi(self, i):
        """Partial derivative of phi: i in {'t', 1, 2, 3}."""
        return {"t": self.dtphi, 1: self.d1phi, 2: self.d2phi, 3: self.J}[i]

    def with_dh_dt(self, dh_dt: np.ndarray) -> "GeometryBundle":
        """Same geometry with a new surface velocity."""
        dtphi = extend_height(dh_dt, self.A, self.grid)
        flat = self.flat and not np.any(dh_dt)
        return _replace(self, dh_dt=dh_dt, dtphi=dtphi, flat=flat)


def _replace(G, **kw):
    d = {k: getattr(G, k) for k in G.__dataclass_fields__}
    d.update(kw)
    return GeometryBundle(**d)


def build_geometry(h: np.ndarray, dh_dt: np.ndarray | None, A: float, grid: Grid,
                   c0: float = 0.5, check: bool = True) -> GeometryBundle:
    """Populate a GeometryBundle from the surface height and its rate.

    Raises
    ------
    DiffeoViolated
        When ``min dz(phi) < c0/2`` and ``check`` is set.
    """
    h = np.asarray(h, dtype=float)
    if dh_dt is None:
        dh_dt = np.zeros_like(h)
    fac, _ = extension_factor(grid, A)
    hh = grid.fft(h)
    etah = fac * hh[None]
    eta = grid.ifft(etah)
    eta[-1] = h
    eta[0] = 0.0
    ik1, ik2 = grid._ik
    d1 = grid.ifft(ik1 * etah)
    d2 = grid.ifft(ik2 * etah)
    d1[0] = 0.0
    d2[0] = 0.0
    # collocation derivative keeps dz(phi) consistent with the operators
    J = 1.0 + grid.dz(eta)
    if check and float(J.min()) < 0.5 * c0:
        raise DiffeoViolated(f"min dz(phi) = {J.min():.4g} fell below c0/2 = {0.5 * c0:.4g}")
    dtphi = extend_height(dh_dt, A, grid)
    invJ = 1.0 / J
    one = np.ones_like(J)
    zero = np.zeros_like(J)
    N = np.stack([-d1, -d2, one])
    Nabs = np.sqrt(1.0 + d1**2 + d2**2)
    n = N / Nabs
    Pi = np.eye(3)[:, :, None, None, None] - n[:, None] * n[None, :]
    P = np.array([[J, zero, zero], [zero, J, zero], [-d1, -d2, one]])
    E = np.array([
        [J, zero, -d1],
        [zero, J, -d2],
        [-d1, -d2, (1.0 + d1**2 + d2**2) * invJ],
    ])
    flat = not (np.any(h) or np.any(dh_dt))
    return GeometryBundle(
        grid=grid, A=float(A), c0=float(c0), h=h, dh_dt=np.asarray(dh_dt, dtype=float),
        eta=eta, d1phi=d1, d2phi=d2, J=J, invJ=invJ, dtphi=dtphi, N=N, Nabs=Nabs,
        n=n, Pi=Pi, P=P, E=E, H=mean_curvature(h, grid), flat=flat,
    )


def flat_geometry(grid: Grid, A: float = 1.0, c0: float = 0.5) -> GeometryBundle:
    return build_geometry(np.zeros(grid.sshape), None, A, grid, c0)


# ----------------------------------------------------------------------
# geodesic chart (diagnostic only)

@dataclass(frozen=True)
class GeodesicChart:
    """Samples of Psi(y, s) = (y, h(y)) + s n_b(y) on a boundary collar."""

    s: np.ndarray          # collar levels, shape (ns,)
    Psi: np.ndarray        # (3, ns, ny, ny)
    metric: np.ndarray     # (3, 3, ns, ny, ny)
    det_metric: np.ndarray  # (ns, ny, ny)
    jacobian: np.ndarray   # det dPsi, (ns, ny, ny)
    block_error: float     # max |g13|, |g23|, |g33 - 1|


def geodesic_chart(h: np.ndarray, grid: Grid, delta: float, ns: int = 9) -> GeodesicChart:
    """Build the normal geodesic chart over the collar ``(-delta, 0]``.

    Raises
    ------
    ChartFolds
        If the Jacobian determinant of Psi changes sign in the collar.
    """
    y1, y2 = grid.Y
    h1, h2 = grid.grad_h(h)
    Nb = np.sqrt(1.0 + h1**2 + h2**2)
    nb = np.stack([-h1, -h2, np.ones_like(h)]) / Nb
    s = np.linspace(-delta, 0.0, ns)
    S = s[:, None, None]
    Psi = np.stack([y1[None] + S * nb[0], y2[None] + S * nb[1], h[None] + S * nb[2]])
    dnb = [np.stack([grid.dx(c, a) for c in nb]) for a in (1, 2)]
    e1 = np.array([1.0, 0.0, 0.0])[:, None, None]
    e2 = np.array([0.0, 1.0, 0.0])[:, None, None]
    t1 = e1 + np.stack([0 * h, 0 * h, h1])
    t2 = e2 + np.stack([0 * h, 0 * h, h2])
    cols = [t1[:, None] + S[None] * dnb[0][:, None],
            t2[:, None] + S[None] * dnb[1][:, None],
            np.broadcast_to(nb[:, None], (3, ns) + h.shape)]
    Jac = np.stack(cols, axis=1)  # (3 comps, 3 cols, ns, ny, ny)
    g = np.einsum("kl...,km...->lm...", Jac, Jac)
    detJ = np.linalg.det(np.moveaxis(Jac, (0, 1), (-2, -1)))
    if np.any(detJ <= 0) and np.any(detJ > 0):
        raise ChartFolds("Jacobian of the geodesic chart changes sign in the collar")
    detg = np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1)))
    err = max(float(np.abs(g[0, 2]).max()), float(np.abs(g[1, 2]).max()),
              float(np.abs(g[2, 2] - 1.0).max()))
    return GeodesicChart(s=s, Psi=Psi, metric=g, det_metric=detg, jacobian=detJ, block_error=err)


def chart_w3_top(v_top: np.ndarray, dh_dt: np.ndarray, h: np.ndarray, grid: Grid) -> np.ndarray:
    """Normal component of the chart velocity on the surface.

    Solves ``dPsi w = v - dPsi/dt`` nodewise at ``s = 0`` and returns ``w3``.
    """
    h1, h2 = grid.grad_h(h)
    Nb = np.sqrt(1.0 + h1**2 + h2**2)
    nb = np.stack([-h1, -h2, np.ones_like(h)]) / Nb
    zero, one = np.zeros_like(h), np.ones_like(h)
    Jac = np.stack([np.stack([one, zero, h1]), np.stack([zero, one, h2]), nb], axis=1)
    rhs = v_top - np.stack([zero, zero, dh_dt])
    M = np.moveaxis(Jac, (0, 1), (-2, -1))
    w = np.linalg.solve(M, np.moveaxis(rhs, 0, -1)[..., None])[..., 0]
    return w[..., 2]
