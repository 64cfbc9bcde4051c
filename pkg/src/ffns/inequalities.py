"""
Numerical laboratory for the functional inequalities behind the estimates.

Every inequality is written ``LHS(f) <= C * RHS(f)``.  Random band-limited
samples are drawn from a seeded sampler that defines continuous fields
(trigonometric in y, Chebyshev in z), so the same sample can be evaluated
on any grid.  The constant is fitted on the coarse grid and the fine grid
must respect it once inflated by 1.25.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import NormSpec, conormal_norm
from .errors import UnknownInequality
from .fields import Grid, conormal_derivative
from .geometry import build_geometry, extend_height
from .operators import div_phi, strain

__all__ = [
    "INEQUALITIES",
    "FieldSampler",
    "Sample",
    "InequalityResult",
    "check_inequality",
    "run_lab",
]

EXT_RATE = 0.5  # extension rate used for the extension and geometric estimates


# ----------------------------------------------------------------------
# sampler

@dataclass
class Sample:
    """Spectral description of one random draw; evaluate with ``on(grid)``."""

    coef: dict
    modes: int

    def on(self, grid: Grid) -> dict:
        out = {}
        for name, c in self.coef.items():
            out[name] = _evaluate(c, grid, self.modes)
        return out


def _evaluate(c, grid, K):
    # place the coefficients on the FFT layout of the grid and synthesise
    if grid.ny < 2 * K + 1:
        raise ValueError("grid too coarse for the sample's modes")
    idx = np.arange(-K, K + 1) % grid.ny
    if c.ndim > 2:
        zeta = 2.0 * grid.z / grid.b + 1.0
        T = np.polynomial.chebyshev.chebvander(zeta, c.shape[-1] - 1)
        c = np.moveaxis(c @ T.T, -1, -3)  # (..., z, a, b)
    full = np.zeros(c.shape[:-2] + (grid.ny, grid.ny), dtype=complex)
    full[..., idx[:, None], idx[None, :]] = c
    return np.real(np.fft.ifft2(full)) * grid.ny**2


class FieldSampler:
    """Draws band-limited random fields with algebraically decaying spectra.

    ``modes`` caps the horizontal wavenumber, ``degree`` the Chebyshev degree
    and ``decay`` the spectral exponent.  ``surface_amp`` scales the random
    height used by the geometric estimates.
    """

    def __init__(self, seed: int = 0, modes: int = 5, degree: int = 8, decay: float = 2.0,
                 surface_amp: float = 0.15):
        self.rng = np.random.default_rng(seed)
        self.modes = modes
        self.degree = degree
        self.decay = decay
        self.surface_amp = surface_amp

    def _spectrum(self, lead=(), vertical=True):
        K = self.modes
        n = np.arange(-K, K + 1)
        r = np.sqrt(n[:, None] ** 2 + n[None, :] ** 2)
        w = (1.0 + r) ** (-self.decay)
        shape = lead + (2 * K + 1, 2 * K + 1)
        if vertical:
            j = np.arange(self.degree + 1)
            wz = (1.0 + j) ** (-self.decay)
            shape = shape + (self.degree + 1,)
            w = w[..., None] * wz
        c = self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape)
        return c * w

    def draw(self) -> Sample:
        scale = np.exp(self.rng.uniform(-1.0, 1.0))
        coef = {
            "f": scale * self._spectrum(),
            "g": self._spectrum(),
            "v": self._spectrum((3,)),
            "s1": self._spectrum(vertical=False),
            "s2": self._spectrum(vertical=False),
        }
        h = self._spectrum(vertical=False)
        h[self.modes, self.modes] = 0.0
        coef["h"] = h
        sample = Sample(coef=coef, modes=self.modes)
        # normalise the height on a reference grid so that max|h| = surface_amp
        ref = Grid(2 * np.pi, 4 * self.modes + 4, 9, 1.0)
        hmax = float(np.abs(_evaluate(h, ref, self.modes)).max())
        if hmax > 0:
            coef["h"] = h * (self.surface_amp * self.rng.uniform(0.2, 1.0) / hmax)
        return sample


# ----------------------------------------------------------------------
# norm helpers

def _X(f, grid, k, s=0.0):
    return conormal_norm([f], NormSpec("volume-conormal", 0, k, s), grid)


def _Y(f, grid, k):
    return conormal_norm([f], NormSpec("volume-sup", 0, int(np.floor(k))), grid)


def _Xs(f, grid, k, s=0.0):
    return conormal_norm([f], NormSpec("surface", 0, k, s), grid)


def _Ys(f, grid, k):
    return conormal_norm([f], NormSpec("surface-sup", 0, int(np.floor(k))), grid)


def _L2(f, grid):
    return grid.l2(f)


def _Z(f, grid, alpha):
    for i in alpha:
        f = conormal_derivative(f, grid, i)
    return f


def _Zs(f, grid, alpha):
    for i in alpha:
        f = grid.dx(f, i)
    return f


def _Zall(f, grid):
    return [conormal_derivative(f, grid, i) for i in (1, 2, 3)]


def _lam(f, grid, s):
    return grid.multiplier(f, (1.0 + grid.ksq) ** (0.5 * s))


def _Hs_tan(f, grid, s):
    return _L2(_lam(f, grid, s), grid)


def _surf_Hs(f, grid, s):
    return grid.l2(_lam(f, grid, s))


def _indices(k, dims=(1, 2, 3)):
    return list(itertools.combinations_with_replacement(dims, k))


# ----------------------------------------------------------------------
# the estimates: each returns (lhs, rhs)

def _product(d, grid, k=2):
    f, g = d["f"], d["g"]
    lhs = 0.0
    for ka in range(k + 1):
        for a in _indices(ka):
            Za = _Z(f, grid, a)
            for b in _indices(k - ka):
                lhs = max(lhs, _L2(Za * _Z(g, grid, b), grid))
    rhs = _X(f, grid, k) * _Y(g, grid, k / 2) + _Y(f, grid, k / 2) * _X(g, grid, k)
    return lhs, rhs


def _commutator(d, grid, k=2):
    f, g = d["f"], d["g"]
    lhs = 0.0
    for a in _indices(k):
        c = _Z(f * g, grid, a) - f * _Z(g, grid, a)
        lhs = max(lhs, _L2(c, grid))
    Zf = _Zall(f, grid)
    rhs = (sum(_X(z, grid, k - 1) for z in Zf) * _Y(g, grid, (k - 1) / 2)
           + sum(_Y(z, grid, (k - 1) / 2) for z in Zf) * _X(g, grid, k - 1))
    return lhs, rhs


def _sym_commutator(d, grid, k=2):
    f, g = d["f"], d["g"]
    lhs = 0.0
    for a in _indices(k):
        c = _Z(f * g, grid, a) - _Z(f, grid, a) * g - f * _Z(g, grid, a)
        lhs = max(lhs, _L2(c, grid))
    Zf, Zg = _Zall(f, grid), _Zall(g, grid)
    Xf = sum(_X(z, grid, k - 2) for z in Zf)
    Xg = sum(_X(z, grid, k - 2) for z in Zg)
    Yf = sum(_Y(z, grid, (k - 2) / 2) for z in Zf)
    Yg = sum(_Y(z, grid, (k - 2) / 2) for z in Zg)
    return lhs, Xf * Yg + Yf * Xg


def _embedding(d, grid, s=1.5):
    f = d["f"]
    lhs = float(np.abs(f).max())
    fz = grid.dz(f)
    rhs = np.sqrt(_Hs_tan(fz, grid, s) * _Hs_tan(f, grid, s)) + _Hs_tan(f, grid, s)
    return lhs, rhs


def _trace(d, grid, s=0.5):
    f = d["f"]
    lhs = _surf_Hs(f[-1], grid, s)
    fz = grid.dz(f)
    rhs = np.sqrt(_Hs_tan(fz, grid, s) * _Hs_tan(f, grid, s)) + _Hs_tan(f, grid, s)
    return lhs, rhs


def _poincare(d, grid):
    f = d["f"]
    return _L2(f, grid), grid.l2(f[-1]) + _L2(grid.dz(f), grid)


def _surface_product(d, grid, s=1.0):
    f, g = d["s1"], d["s2"]
    lhs = _surf_Hs(f * g, grid, s)
    rhs = np.abs(f).max() * _surf_Hs(g, grid, s) + np.abs(g).max() * _surf_Hs(f, grid, s)
    return lhs, rhs


def _half_product(d, grid, k=2, s=0.5):
    f, g = d["s1"], d["s2"]
    lhs = 0.0
    for ka in range(k + 1):
        for a in _indices(ka, (1, 2)):
            Za = _Zs(f, grid, a)
            for b in _indices(k - ka, (1, 2)):
                lhs = max(lhs, _surf_Hs(Za * _Zs(g, grid, b), grid, s))
    rhs = (_Xs(f, grid, k, s) * _Ys(g, grid, k / 2 + 1)
           + _Ys(f, grid, k / 2 + 1) * _Xs(g, grid, k, s))
    return lhs, rhs


def _extension(d, grid, s=1.0):
    # full H^1 of the extension against |h|_{1/2}
    h = d["h"]
    eta = extend_height(h, EXT_RATE, grid)
    parts = [eta, grid.dx(eta, 1), grid.dx(eta, 2), grid.dz(eta)]
    lhs = np.sqrt(sum(_L2(p, grid) ** 2 for p in parts))
    return lhs, _surf_Hs(h, grid, s - 0.5)


def _geometry(d, grid):
    return build_geometry(d["h"], None, EXT_RATE, grid, c0=0.0, check=False)


def _grad_sq(f, grid):
    return sum(_L2(grid.dx(f, i), grid) ** 2 for i in (1, 2)) + _L2(grid.dz(f), grid) ** 2


def _min_grad(d, grid):
    G = _geometry(d, grid)
    f = d["f"]
    gp = _grad_phi_nodal(f, G)
    rhs = grid.integrate(np.sum(gp * gp, axis=0) * G.J)
    return _grad_sq(f, grid), rhs


def _grad_phi_nodal(f, G):
    grid = G.grid
    fz = grid.dz(f) * G.invJ
    return np.stack([grid.dx(f, 1) - G.d1phi * fz, grid.dx(f, 2) - G.d2phi * fz, fz])


def _korn(d, grid):
    G = _geometry(d, grid)
    v = d["v"]
    lhs = sum(_grad_sq(v[i], grid) for i in range(3))
    S = strain(v, G)
    rhs = grid.integrate(np.sum(S * S, axis=(0, 1)) * G.J) + sum(_L2(v[i], grid) ** 2 for i in range(3))
    return lhs, rhs


def _boundary_minus_half(d, grid):
    G = _geometry(d, grid)
    v = d["v"]
    vN = sum(G.N[i, -1] * v[i, -1] for i in range(3))
    lhs = _surf_Hs(vN, grid, -0.5)
    div = div_phi(v, G)
    rhs = np.sqrt(sum(_L2(v[i], grid) ** 2 for i in range(3))) + _L2(div, grid)
    return lhs, rhs


@dataclass(frozen=True)
class Inequality:
    key: str
    name: str
    evaluate: object


INEQUALITIES = {
    "A2": Inequality("A2", "conormal product", _product),
    "A3": Inequality("A3", "conormal commutator", _commutator),
    "A4": Inequality("A4", "symmetric commutator", _sym_commutator),
    "A5": Inequality("A5", "anisotropic embedding", _embedding),
    "A6": Inequality("A6", "trace", _trace),
    "A7": Inequality("A7", "Poincare", _poincare),
    "A8": Inequality("A8", "surface product", _surface_product),
    "A11": Inequality("A11", "half-order surface product", _half_product),
    "B4": Inequality("B4", "extension bound", _extension),
    "C1": Inequality("C1", "gradient control", _min_grad),
    "C2": Inequality("C2", "Korn", _korn),
    "C3": Inequality("C3", "normal trace in H^-1/2", _boundary_minus_half),
}


@dataclass
class InequalityResult:
    key: str
    name: str
    samples: int
    c_fit_coarse: float
    c_fit_fine: float
    violations: int
    ratio: float = field(init=False)

    def __post_init__(self):
        self.ratio = self.c_fit_coarse / self.c_fit_fine if self.c_fit_fine > 0 else float("inf")

    @property
    def passed(self) -> bool:
        return self.violations == 0 and 0.75 <= self.ratio <= 1.25

    def as_dict(self) -> dict:
        return {"id": self.key, "name": self.name, "samples": self.samples,
                "c_fit_coarse": self.c_fit_coarse, "c_fit_fine": self.c_fit_fine,
                "ratio": self.ratio, "violations": self.violations, "passed": self.passed}


def check_inequality(key: str, samples: int = 100, seed: int = 0,
                     grids: tuple = ((32, 33), (64, 65)), period: float = 2 * np.pi,
                     depth: float = 1.0, sampler: FieldSampler | None = None,
                     inflation: float = 1.25) -> InequalityResult:
    """Fit ``C`` on the coarse grid and count fine-grid violations of
    ``LHS <= inflation * C * RHS``.

    Raises
    ------
    UnknownInequality
        If ``key`` is not one of :data:`INEQUALITIES`.
    """
    try:
        ineq = INEQUALITIES[key]
    except KeyError:
        raise UnknownInequality(f"no inequality named {key!r}; known: {sorted(INEQUALITIES)}") from None
    coarse = Grid(period, grids[0][0], grids[0][1], depth)
    fine = Grid(period, grids[1][0], grids[1][1], depth)
    sampler = sampler or FieldSampler(seed)
    draws = [sampler.draw() for _ in range(samples)]
    pairs_c, pairs_f = [], []
    for s in draws:
        pairs_c.append(ineq.evaluate(s.on(coarse), coarse))
        pairs_f.append(ineq.evaluate(s.on(fine), fine))
    c_c = max(lhs / rhs for lhs, rhs in pairs_c if rhs > 0)
    c_f = max(lhs / rhs for lhs, rhs in pairs_f if rhs > 0)
    viol = sum(1 for lhs, rhs in pairs_f if lhs > inflation * c_c * rhs)
    return InequalityResult(key, ineq.name, samples, float(c_c), float(c_f), int(viol))


def run_lab(keys=None, samples: int = 100, seed: int = 0, **kw) -> list[InequalityResult]:
    keys = list(INEQUALITIES) if keys is None else list(keys)
    return [check_inequality(k, samples=samples, seed=seed, **kw) for k in keys]
