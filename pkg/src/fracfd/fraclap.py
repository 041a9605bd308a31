"""Fractional Laplacian on periodic grids and an independent quadrature oracle.

The grid operator is the Fourier multiplier |k|^sigma.  The oracle
evaluates the hypersingular integral for radial functions by reducing it
to a one-dimensional radial integral.  Lattice power sums give the exact
periodic counterpart of |x|^{-s}, which is what the power-law identity
has to be compared with on a torus.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import integrate, special

from .exponents import DomainError
from .rearrange import Field, Grid


def _wavenumbers(grid: Grid) -> np.ndarray:
    """|k| on the half spectrum used by rfftn (last axis halved)."""
    k = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.h)
    kr = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.h)
    axes = [k] * (grid.N - 1) + [kr]
    k2 = np.zeros([a.size for a in axes])
    for d, a in enumerate(axes):
        sh = [1] * grid.N
        sh[d] = a.size
        k2 = k2 + a.reshape(sh) ** 2
    return np.sqrt(k2)


@dataclass(frozen=True)
class SpectralOperator:
    """(-Delta)^{sigma/2} as the multiplier |k|^sigma on a periodic grid."""

    grid: Grid
    sigma: float
    multiplier: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if not (0.0 < self.sigma < 2.0):
            raise DomainError(f"sigma must lie in (0, 2), got {self.sigma}")
        if self.multiplier is None:
            mult = _wavenumbers(self.grid) ** self.sigma
            mult.flat[0] = 0.0
            mult.setflags(write=False)
            object.__setattr__(self, "multiplier", mult)

    @property
    def _axes(self):
        return tuple(range(self.grid.N))

    def forward(self, v: np.ndarray) -> np.ndarray:
        return sfft.rfftn(v, axes=self._axes)

    def backward(self, vh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(vh, s=self.grid.shape, axes=self._axes)

    def apply_array(self, v: np.ndarray) -> np.ndarray:
        return self.backward(self.multiplier * self.forward(v))

    def solve_shifted(self, v: np.ndarray, c: float, dt: float) -> np.ndarray:
        """(c + dt |k|^sigma)^{-1} v."""
        return self.backward(self.forward(v) / (c + dt * self.multiplier))

    def max_multiplier(self) -> float:
        return float(self.multiplier.max())


def apply(op: SpectralOperator, f: Field) -> Field:
    """Inverse transform of |k|^sigma times the transform of f."""
    if f.grid != op.grid:
        raise ValueError("field and operator live on different grids")
    return Field(f.grid, op.apply_array(f.values))


def normalization_constant(N: int, sigma: float) -> float:
    """c_{N,sigma} in the singular-integral form, matched to the |k|^sigma symbol."""
    return (sigma * 2.0 ** (sigma - 1.0) * math.gamma((N + sigma) / 2.0)
            / (math.pi ** (N / 2.0) * math.gamma(1.0 - sigma / 2.0)))


def sphere_area(N: int) -> float:
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float


_GL = np.polynomial.legendre.leggauss(64)


def _vec(f, d):
    try:
        out = np.asarray(f(d), dtype=float)
        if out.shape == d.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([f(float(v)) for v in d])


def _spherical_mean(f: Callable, r: float, rho: float, N: int, tail=None) -> float:
    """Average of f(|x + rho w|) over unit vectors w, |x| = r."""
    if tail is not None and rho > tail[2] + r:
        # pure power-law region: closed form via the hypergeometric mean
        c, g, _ = tail
        z = (r / rho) ** 2
        return c * rho ** (-g) * special.hyp2f1(g / 2.0, (g - N + 2) / 2.0, N / 2.0, z)
    if N == 1:
        return 0.5 * (f(abs(r + rho)) + f(abs(r - rho)))
    if rho <= 0.5 * r:
        # the integrand is smooth here; a fixed rule keeps f(r) - mean ~ rho^2
        # free of adaptive-quadrature noise
        if N == 3:
            tau, wq = _GL
            d = r + rho * tau
            return float(np.sum(wq * _vec(f, d) * d) / (2.0 * r))
        th = 0.5 * np.pi * (_GL[0] + 1.0)
        wq = 0.5 * np.pi * _GL[1] * np.sin(th) ** (N - 2)
        d = np.sqrt(r * r + rho * rho + 2 * r * rho * np.cos(th))
        return float(np.sum(wq * _vec(f, d)) / np.sum(wq))
    if N == 3:
        # d = |x + rho w| runs over [|r - rho|, r + rho] with density d / (2 r rho)
        lo, hi = abs(r - rho), r + rho
        val, _ = integrate.quad(lambda d: f(d) * d, lo, hi, limit=200)
        return val / (2.0 * r * rho)
    # general N: integrate in the polar angle with weight sin^{N-2}
    wt = lambda th: math.sin(th) ** (N - 2)
    num, _ = integrate.quad(
        lambda th: f(math.sqrt(max(r * r + rho * rho + 2 * r * rho * math.cos(th), 0.0))) * wt(th),
        0.0, math.pi, limit=200, points=[math.pi] if abs(r - rho) < 1e-12 * r else None)
    den = math.sqrt(math.pi) * math.gamma((N - 1) / 2.0) / math.gamma(N / 2.0)
    return num / den


def apply_radial_quadrature(f: Callable[[float], float], sigma: float, r: float, N: int,
                            tail: Optional[tuple] = None, rho_max: Optional[float] = None,
                            epsabs: float = 0.0, epsrel: float = 1e-9) -> QuadratureResult:
    """c_{N,sigma} P.V. int (f(x) - f(y)) |x - y|^{-N-sigma} dy at |x| = r.

    f is a radial function of the radius.  tail = (c, gamma, R) declares that
    f(rho) = c rho^{-gamma} for rho >= R; it is used for the far field.
    The sphere-averaged integrand is second order in rho near rho = 0, so
    the remaining one-dimensional integral converges absolutely.
    """
    if not r > 0:
        raise DomainError("radius must be positive")
    if not (0 < sigma < 2):
        raise DomainError("sigma must lie in (0, 2)")
    fr = f(r)
    g = lambda rho: rho ** (-1.0 - sigma) * (fr - _spherical_mean(f, r, rho, N, tail))
    # integrable kinks at rho = r (the origin is crossed) and near the tail start
    brk = sorted({r, 2 * r} | ({tail[2] + r, abs(tail[2] - r)} if tail else set()))
    brk = [b for b in brk if b > 0]
    if rho_max is None:
        rho_max = max(brk) * 4.0
    pieces = [0.0] + [b for b in brk if b < rho_max] + [rho_max, np.inf]
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        # convergence trouble shows up in the returned error estimate instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(pieces[:-1], pieces[1:]):
            v, e = integrate.quad(g, a, b, limit=400, epsabs=epsabs, epsrel=epsrel)
            total += v
            err += e
    c = normalization_constant(N, sigma) * sphere_area(N)
    if not math.isfinite(total):
        raise RuntimeError(f"radial quadrature did not converge at r={r}")
    return QuadratureResult(c * total, c * err)


# ---------------------------------------------------------------------------
# periodic power laws
# ---------------------------------------------------------------------------

def _upper_gamma(b: float, x: float) -> float:
    """Upper incomplete Gamma(b, x) for b > -1, b != 0, x > 0."""
    if b > 0:
        return float(special.gammaincc(b, x) * special.gamma(b))
    # Gamma(b, x) = (Gamma(b + 1, x) - x^b e^{-x}) / b
    return float((special.gammaincc(b + 1.0, x) * special.gamma(b + 1.0) - x ** b * math.exp(-x)) / b)


def lattice_power_sum(points, s: float, N: int, L: float, exclude_origin_term: bool = False,
                      nreal: int = 1, nrec: int = 2) -> np.ndarray:
    """Sum over R in 2L Z^N of |x + R|^{-s}, for 0 < s < N + 2, s != N.

    For s < N the sum diverges and this is its analytic continuation, which
    fixes the torus mean to zero; for s > N it is the convergent sum.  With
    exclude_origin_term the singular |x|^{-s} itself is removed, leaving a
    function that is smooth near x = 0.  Ewald splitting with parameter
    a = 1/(2L)^2; the default truncations give about 1e-7 relative accuracy.
    """
    if not (0 < s < N + 2) or s == N:
        raise DomainError("lattice sums implemented for 0 < s < N + 2, s != N")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    V = (2.0 * L) ** N
    a = 1.0 / (2.0 * L) ** 2
    out = np.zeros(X.shape[0])
    for j in itertools.product(range(-nreal, nreal + 1), repeat=N):
        y = X + 2.0 * L * np.asarray(j, dtype=float)
        r2 = np.einsum("ij,ij->i", y, y)
        if any(j):
            out += r2 ** (-s / 2.0) * special.gammaincc(s / 2.0, np.pi * a * r2)
            continue
        if exclude_origin_term:
            # |x|^{-s} (Q - 1) = -|x|^{-s} P(s/2, pi a r^2), finite at 0
            with np.errstate(divide="ignore", invalid="ignore"):
                t = r2 ** (-s / 2.0) * special.gammainc(s / 2.0, np.pi * a * r2)
            t = np.where(r2 > 0, t, (np.pi * a) ** (s / 2.0) / special.gamma(s / 2.0 + 1.0))
            out -= t
        else:
            out += r2 ** (-s / 2.0) * special.gammaincc(s / 2.0, np.pi * a * r2)
    b = (N - s) / 2.0
    pref = np.pi ** (s / 2.0) / special.gamma(s / 2.0)
    for j in itertools.product(range(-nrec, nrec + 1), repeat=N):
        if not any(j):
            continue
        G = (np.pi / L) * np.asarray(j, dtype=float)
        g2 = float(G @ G)
        coef = (g2 / (4 * np.pi)) ** (-b) * _upper_gamma(b, g2 / (4 * np.pi * a)) / V
        out += pref * coef * np.cos(X @ G)
    out += pref * 2.0 * a ** ((s - N) / 2.0) / (s - N) / V
    return out


def _gaussian_moment(j: int, N: int, T: float) -> float:
    # int_0^inf r^{N-1+2j} exp(-T r^2) dr
    return math.gamma((N + 2 * j) / 2.0) / (2.0 * T ** ((N + 2 * j) / 2.0))


def _core_moment(j: int, N: int, alpha: float, T: float) -> float:
    # int_0^inf r^{N-1+2j} r^{-alpha} Q(alpha/2, T r^2) dr
    s = (N + 2 * j - alpha) / 2.0
    a = alpha / 2.0
    return 0.5 * T ** (-s) * math.gamma(s + a) / (s * math.gamma(a))


@dataclass(frozen=True)
class RegularizedPowerLaw:
    """|x|^{-alpha} with a moment-matched Gaussian core near the origin.

    |x|^{-alpha} = |x|^{-alpha} P(alpha/2, T|x|^2) + |x|^{-alpha} Q(alpha/2, T|x|^2);
    the first part is a superposition of wide Gaussians and is smooth, the
    second is replaced by Gaussians carrying the same mass and second moment.
    """

    alpha: float
    N: int
    T: float
    Ts: tuple
    coefs: tuple

    @staticmethod
    def build(alpha: float, N: int, h: float, c: float = 0.35,
              widths: Sequence[float] = (1.0, 0.7)) -> "RegularizedPowerLaw":
        if not (0 < alpha < N):
            raise DomainError("need 0 < alpha < N for a locally integrable power")
        T = c / (h * h)
        Ts = [T * w for w in widths]
        k = len(Ts)
        A = np.array([[_gaussian_moment(j, N, Ti) for Ti in Ts] for j in range(k)])
        rhs = np.array([_core_moment(j, N, alpha, T) for j in range(k)])
        cs = np.linalg.solve(A, rhs)
        return RegularizedPowerLaw(alpha, N, T, tuple(Ts), tuple(float(v) for v in cs))

    def local(self, r: np.ndarray) -> np.ndarray:
        """Regularized free-space |x|^{-alpha} at radius r."""
        a = self.alpha / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            smooth = np.where(r > 0, r ** (-self.alpha) * special.gammainc(a, self.T * r * r),
                              self.T ** a / special.gamma(a + 1.0))
        core = sum(c * np.exp(-T * r * r) for c, T in zip(self.coefs, self.Ts))
        return smooth + core


def periodic_power_law_field(grid: Grid, alpha: float, c: float = 0.35,
                             widths: Sequence[float] = (1.0, 0.7), chunk: int = 1 << 18) -> Field:
    """Sampled periodic |x|^{-alpha} (lattice sum) with a regularized origin."""
    reg = RegularizedPowerLaw.build(alpha, grid.N, grid.h, c, widths)
    r = grid.radius().ravel()
    pts = grid.points()
    out = np.empty(grid.size)
    for i in range(0, grid.size, chunk):
        sl = slice(i, i + chunk)
        out[sl] = lattice_power_sum(pts[sl], alpha, grid.N, grid.L, exclude_origin_term=True)
        out[sl] += reg.local(r[sl])
    return Field(grid, out)


def power_law_identity_error(grid: Grid, sigma: float, alpha: float, inner: float = 0.1,
                             outer: float = 0.4, max_points: int = 4000) -> dict:
    """Spectral (-Delta)^{sigma/2} of sampled |x|^{-alpha} against kappa |x|^{-alpha-sigma}.

    Both sides are taken on the torus: the data and the target are lattice
    power sums, so the comparison isolates the discretization error.
    Returns the maximum relative error on the annulus inner L < |x| < outer L.
    """
    from .exponents import kappa

    kap = kappa(alpha, grid.N, sigma)
    f = periodic_power_law_field(grid, alpha)
    op = SpectralOperator(grid, sigma)
    g = op.apply_array(f.values).ravel()
    r = grid.radius().ravel()
    idx = np.flatnonzero((r > inner * grid.L) & (r < outer * grid.L))
    if idx.size > max_points:
        idx = idx[:: idx.size // max_points]
    pts = grid.points()[idx]
    target = kap * lattice_power_sum(pts, alpha + sigma, grid.N, grid.L)
    scale = kap * r[idx] ** (-alpha - sigma)
    err = np.abs(g[idx] - target) / scale
    return {"N": grid.N, "n": grid.n, "sigma": sigma, "alpha": alpha, "kappa": kap,
            "max_rel_error": float(err.max()), "points": int(idx.size)}
