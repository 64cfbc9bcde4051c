"""
Grids, spectral transforms and differentiation on the flattened strip.

Volume fields are real arrays of shape ``(nz, ny, ny)`` indexed
``[k, i1, i2]`` with ``k = 0`` the bottom plane ``z = -b`` and ``k = nz - 1``
the top plane ``z = 0``.  Surface fields have shape ``(ny, ny)`` and broadcast
against volume fields as ``f[None]``.  Vector fields carry a leading axis of
length 3 (components 1, 2 and z).

Horizontally the strip is the periodic torus ``[0, L)^2`` treated with FFTs;
vertically the nodes are Chebyshev-Lobatto points mapped to ``[-b, 0]``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import InsufficientHistory

__all__ = [
    "Grid",
    "cheb_lobatto",
    "clenshaw_curtis",
    "horizontal_derivative",
    "vertical_derivative",
    "conormal_derivative",
    "time_derivative_from_history",
    "FLOW_LAYOUT",
    "write_snapshot",
    "read_snapshot",
    "export_csv_slice",
]


def cheb_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto nodes on [-1, 1] in ascending order and the
    collocation differentiation matrix acting on nodal values."""
    if n < 1:
        raise ValueError("need at least two nodes")
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.where((j == 0) | (j == n), 2.0, 1.0) * (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    # flip to ascending order
    return x[::-1].copy(), D[::-1, ::-1].copy()


def clenshaw_curtis(n: int) -> np.ndarray:
    """Clenshaw-Curtis weights for the n+1 Lobatto nodes on [-1, 1]."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    inner = theta[1:-1]
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
        v -= np.cos(n * inner) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
    w[1:-1] = 2.0 * v / n
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Periodic-horizontal, Chebyshev-vertical grid.

    Parameters
    ----------
    L : float
        Horizontal period in both directions.
    ny : int
        Nodes (and Fourier modes) per horizontal direction, even, >= 8.
    nz : int
        Vertical collocation nodes including both endpoints, >= 8.
    b : float
        Depth of the strip.
    """

    L: float
    ny: int
    nz: int
    b: float

    def __post_init__(self):
        if self.ny < 8 or self.ny % 2:
            raise ValueError(f"ny must be even and >= 8, got {self.ny}")
        if self.nz < 8:
            raise ValueError(f"nz must be >= 8, got {self.nz}")
        if not (self.L > 0 and self.b > 0):
            raise ValueError("L and b must be positive")

    # ------------------------------------------------------------------
    # coordinates
    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * (self.L / self.ny)

    @cached_property
    def dy(self) -> float:
        return self.L / self.ny

    @cached_property
    def _cheb(self):
        return cheb_lobatto(self.nz - 1)

    @cached_property
    def z(self) -> np.ndarray:
        x = self._cheb[0]
        z = 0.5 * self.b * (x - 1.0)
        z[0], z[-1] = -self.b, 0.0
        return z

    @cached_property
    def Dz(self) -> np.ndarray:
        return (2.0 / self.b) * self._cheb[1]

    @cached_property
    def D2z(self) -> np.ndarray:
        return self.Dz @ self.Dz

    @cached_property
    def wz(self) -> np.ndarray:
        return 0.5 * self.b * clenshaw_curtis(self.nz - 1)

    @cached_property
    def dz_min(self) -> float:
        return float(np.min(np.diff(self.z)))

    @cached_property
    def Y(self) -> tuple[np.ndarray, np.ndarray]:
        """Surface coordinate arrays (y1, y2), each of shape (ny, ny)."""
        return np.meshgrid(self.y, self.y, indexing="ij")

    @cached_property
    def Z(self) -> np.ndarray:
        """Vertical coordinate broadcast to volume shape."""
        return np.broadcast_to(self.z[:, None, None], self.vshape)

    @property
    def sshape(self) -> tuple[int, int]:
        return (self.ny, self.ny)

    @property
    def vshape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.ny)

    # ------------------------------------------------------------------
    # wavenumbers (rfft2 layout over the last two axes)
    @cached_property
    def k1(self) -> np.ndarray:
        n = np.fft.fftfreq(self.ny, 1.0 / self.ny)
        return (2 * np.pi / self.L) * n[:, None] * np.ones((1, self.ny // 2 + 1))

    @cached_property
    def k2(self) -> np.ndarray:
        n = np.fft.rfftfreq(self.ny, 1.0 / self.ny)
        return (2 * np.pi / self.L) * np.ones((self.ny, 1)) * n[None, :]

    @cached_property
    def _ik(self) -> tuple[np.ndarray, np.ndarray]:
        # odd derivatives drop the Nyquist modes to keep real output real
        nyq1 = np.abs(np.fft.fftfreq(self.ny, 1.0 / self.ny))[:, None] == self.ny // 2
        nyq2 = np.fft.rfftfreq(self.ny, 1.0 / self.ny)[None, :] == self.ny // 2
        return (
            np.where(nyq1, 0.0, 1j * self.k1),
            np.where(nyq2, 0.0, 1j * self.k2),
        )

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def kmax_band(self) -> int:
        """Largest retained integer mode index under the 2/3 rule."""
        return (self.ny - 1) // 3

    @cached_property
    def band(self) -> np.ndarray:
        n1 = np.abs(np.fft.fftfreq(self.ny, 1.0 / self.ny))[:, None]
        n2 = np.fft.rfftfreq(self.ny, 1.0 / self.ny)[None, :]
        K = self.kmax_band
        return (n1 <= K) & (n2 <= K)

    @cached_property
    def k_max(self) -> float:
        """Largest resolved wavenumber magnitude inside the band."""
        return float(np.sqrt(2.0) * self.kmax_band * 2 * np.pi / self.L)

    # ------------------------------------------------------------------
    # transforms
    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfft2(f, axes=(-2, -1))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfft2(fh, s=self.sshape, axes=(-2, -1))

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Project a field onto the 2/3 band."""
        return self.ifft(self.fft(f) * self.band)

    def mul(self, *factors: np.ndarray) -> np.ndarray:
        """Dealiased pointwise product."""
        out = factors[0]
        for f in factors[1:]:
            out = out * f
        return self.dealias(out)

    def dx(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral derivative along horizontal axis 1 or 2."""
        ik = self._ik[axis - 1]
        return self.ifft(ik * self.fft(f))

    def grad_h(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        fh = self.fft(f)
        ik1, ik2 = self._ik
        return self.ifft(ik1 * fh), self.ifft(ik2 * fh)

    def dz(self, f: np.ndarray) -> np.ndarray:
        """Collocation derivative along the vertical (third-from-last) axis."""
        shp = f.shape
        return (self.Dz @ f.reshape(shp[:-2] + (-1,))).reshape(shp)

    def multiplier(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        """Apply a real Fourier multiplier given on the rfft layout."""
        return self.ifft(symbol * self.fft(f))

    # ------------------------------------------------------------------
    # quadrature
    @cached_property
    def wvol(self) -> np.ndarray:
        return self.wz[:, None, None] * self.dy**2

    def integrate(self, f: np.ndarray) -> float:
        """Volume integral over [0,L)^2 x [-b,0]."""
        return float(np.sum(f * self.wvol))

    def integrate_surface(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.dy**2)

    def l2(self, f: np.ndarray) -> float:
        f = np.asarray(f)
        if f.shape[-3:] == self.vshape:
            return float(np.sqrt(np.sum(f**2 * self.wvol)))
        return float(np.sqrt(np.sum(f**2) * self.dy**2))

    # ------------------------------------------------------------------
    def zeros(self, kind: str = "volume") -> np.ndarray:
        shape = {"volume": self.vshape, "surface": self.sshape, "vector": (3,) + self.vshape}[kind]
        return np.zeros(shape)

    def top(self, f: np.ndarray) -> np.ndarray:
        return f[..., -1, :, :]

    def bottom(self, f: np.ndarray) -> np.ndarray:
        return f[..., 0, :, :]

    def refined(self, factor: int = 2, vertical: bool = True) -> "Grid":
        nz = (self.nz - 1) * factor + 1 if vertical else self.nz
        return Grid(self.L, self.ny * factor, nz, self.b)


def horizontal_derivative(f: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Spectral derivative of a surface or volume field along axis 1 or 2."""
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    return grid.dx(f, axis)


def vertical_derivative(f: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.dz(f)


def conormal_derivative(f: np.ndarray, grid: Grid, index: int) -> np.ndarray:
    """Apply Z1 = d1, Z2 = d2 or Z3 = z(z+b) dz."""
    if index in (1, 2):
        return grid.dx(f, index)
    if index == 3:
        w = (grid.z * (grid.z + grid.b))[:, None, None]
        out = w * grid.dz(f)
        out[..., 0, :, :] = 0.0
        out[..., -1, :, :] = 0.0
        return out
    raise ValueError("index must be 1, 2 or 3")


def _backward_weights(order: int, npts: int) -> np.ndarray:
    # weights w_j for f(t - j dt), j = 0..npts-1, scaled by dt**order
    j = np.arange(npts)
    V = np.vander(-j.astype(float), npts, increasing=True).T
    rhs = np.zeros(npts)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


def time_derivative_from_history(ring: Sequence[np.ndarray], order: int, dt: float) -> np.ndarray:
    """Backward-difference estimate of the ``order``-th time derivative at the
    newest entry of ``ring`` (ordered oldest to newest, uniform spacing dt).

    Uses the newest ``order + 2`` entries, which gives second-order accuracy.
    """
    if order == 0:
        if len(ring) < 1:
            raise InsufficientHistory("empty history")
        return np.asarray(ring[-1])
    if order > 3:
        raise ValueError("time derivatives above third order are not supported")
    npts = order + 2
    if len(ring) < npts:
        raise InsufficientHistory(
            f"order {order} needs {npts} snapshots, history holds {len(ring)}"
        )
    w = _backward_weights(order, npts)
    out = np.zeros_like(np.asarray(ring[-1], dtype=float))
    for j in range(npts):
        out = out + w[j] * np.asarray(ring[-1 - j])
    return out / dt**order


# ----------------------------------------------------------------------
# snapshots

MAGIC = b"FFNS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIddd")

FLOW_LAYOUT = (
    ("v1", "volume"),
    ("v2", "volume"),
    ("v3", "volume"),
    ("h", "surface"),
    ("q", "volume"),
)


def _shape(grid_ny: int, grid_nz: int, kind: str) -> tuple[int, ...]:
    return (grid_nz, grid_ny, grid_ny) if kind == "volume" else (grid_ny, grid_ny)


def write_snapshot(path, grid: Grid, t: float, fields: dict, layout=FLOW_LAYOUT) -> None:
    """Write fields in the order given by ``layout`` after a fixed header."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.ny, grid.nz, grid.L, grid.b, t))
        for name, kind in layout:
            arr = np.asarray(fields[name], dtype="<f8")
            if arr.shape != _shape(grid.ny, grid.nz, kind):
                raise ValueError(f"field {name} has shape {arr.shape}")
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_snapshot(path, layout=FLOW_LAYOUT) -> tuple[Grid, float, dict]:
    raw = Path(path).read_bytes()
    magic, version, ny, nz, L, b, t = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    grid = Grid(L, ny, nz, b)
    off = _HEADER.size
    out = {}
    for name, kind in layout:
        shape = _shape(ny, nz, kind)
        n = int(np.prod(shape))
        out[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: size does not match layout")
    return grid, t, out


def export_csv_slice(path, grid: Grid, f: np.ndarray, *, z_index: int | None = None,
                     y2_index: int | None = None) -> None:
    """Write a planar slice of a field as CSV rows ``(coord_a, coord_b, value)``.

    Surface fields are written whole.  Volume fields need either a vertical
    level ``z_index`` or a horizontal row ``y2_index``.
    """
    f = np.asarray(f)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if f.ndim == 2 or z_index is not None:
            sl = f if f.ndim == 2 else f[z_index]
            w.writerow(["y1", "y2", "value"])
            for i, a in enumerate(grid.y):
                for j, c in enumerate(grid.y):
                    w.writerow([repr(a), repr(c), repr(float(sl[i, j]))])
        elif y2_index is not None:
            sl = f[:, :, y2_index]
            w.writerow(["y1", "z", "value"])
            for k, c in enumerate(grid.z):
                for i, a in enumerate(grid.y):
                    w.writerow([repr(a), repr(c), repr(float(sl[k, i]))])
        else:
            raise ValueError("volume slices need z_index or y2_index")
