"""Closed-form constants, scaling exponents and nonlinearity orderings.

Everything in this module is pure formula work: no grids, no transforms.
The other modules import the exponents and constants from here so that a
single definition is used across the code base.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when parameters fall outside the range where a formula holds."""


def _gamma(x: float) -> float:
    if x <= 0.0 and float(x).is_integer():
        raise DomainError(f"Gamma pole at {x}")
    if x <= 0.0:
        raise DomainError(f"Gamma argument must be positive here, got {x}")
    return math.gamma(x)


def _lgamma(x: float) -> float:
    if x <= 0.0:
        raise DomainError(f"Gamma argument must be positive here, got {x}")
    return math.lgamma(x)


@dataclass(frozen=True)
class ProblemParams:
    """Dimension N, fractional order sigma and diffusion exponent m."""

    N: int
    sigma: float
    m: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N must be a positive integer, got {self.N}")
        if not (0.0 < self.sigma < 2.0):
            raise DomainError(f"sigma must lie in (0, 2), got {self.sigma}")
        if not (self.m > 0.0):
            raise DomainError(f"m must be positive, got {self.m}")

    @property
    def m_c(self) -> float:
        return (self.N - self.sigma) / self.N

    @property
    def m_1(self) -> float:
        return self.N / (self.N + self.sigma)

    @property
    def p_tilde(self) -> float:
        return self.N * (1.0 - self.m) / self.sigma

    def as_dict(self) -> dict:
        return {"N": int(self.N), "sigma": float(self.sigma), "m": float(self.m)}


@dataclass(frozen=True)
class ExponentSet:
    """Scaling exponents and thresholds for given (N, sigma, m[, p]).

    Fields that do not apply are None: alpha/beta need m > m_c and
    alpha_p/beta_p need p > max(1, p_tilde).
    """

    m_c: float
    m_1: float
    p_tilde: float
    alpha: Optional[float] = None
    beta: Optional[float] = None
    p: Optional[float] = None
    alpha_p: Optional[float] = None
    beta_p: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("m_c", "m_1", "p_tilde", "alpha", "beta", "p", "alpha_p", "beta_p")}


def kappa(alpha: float, N: int, sigma: float) -> float:
    """Constant in (-Delta)^{sigma/2} |x|^{-alpha} = kappa |x|^{-alpha-sigma}.

    Valid for 0 < alpha < N - sigma, where every Gamma argument is positive.
    """
    if not (0.0 < sigma < 2.0):
        raise DomainError(f"sigma must lie in (0, 2), got {sigma}")
    if not (0.0 < alpha < N - sigma):
        raise DomainError(
            f"alpha={alpha} outside (0, N - sigma) = (0, {N - sigma}); "
            "the power law is not an admissible singular profile")
    # log form keeps the ratio accurate when sigma is close to 2 and
    # Gamma((N - alpha - sigma)/2) is large
    lg = (_lgamma((N - alpha) / 2.0) + _lgamma((alpha + sigma) / 2.0)
          - _lgamma((N - alpha - sigma) / 2.0) - _lgamma(alpha / 2.0))
    return 2.0 ** sigma * math.exp(lg)


def kappa_continued(alpha: float, N: int, sigma: float) -> float:
    """kappa for 0 < alpha < N, alpha != N - sigma.

    Above N - sigma the identity still holds pointwise away from the origin
    and kappa is negative there.
    """
    if not (0.0 < sigma < 2.0):
        raise DomainError(f"sigma must lie in (0, 2), got {sigma}")
    if not (0.0 < alpha < N) or math.isclose(alpha, N - sigma):
        raise DomainError(f"alpha={alpha} must lie in (0, N) and differ from N - sigma")
    if alpha < N - sigma:
        return kappa(alpha, N, sigma)
    return 2.0 ** sigma * math.gamma((N - alpha) / 2.0) * math.gamma((alpha + sigma) / 2.0) / (
        math.gamma((N - alpha - sigma) / 2.0) * math.gamma(alpha / 2.0))


def _denominator(params: ProblemParams, p: float = 1.0) -> float:
    return params.N * (params.m - 1.0) + params.sigma * p


def exponent_set(params: ProblemParams, p: Optional[float] = None) -> ExponentSet:
    """Fill the thresholds and whichever smoothing exponents apply."""
    if p is not None and not p >= 1.0:
        raise DomainError(f"p must be at least 1, got {p}")
    N = params.N
    alpha = beta = alpha_p = beta_p = None
    den = _denominator(params)
    if params.m > params.m_c and den > 0:
        beta = 1.0 / den
        alpha = N * beta
    if p is not None:
        den_p = _denominator(params, p)
        # p = 1 is the L^1 case; p > p_tilde is what makes den_p positive
        if (p > max(1.0, params.p_tilde) or p == 1.0) and den_p > 0:
            beta_p = p / den_p
            alpha_p = (N / p) * beta_p
    return ExponentSet(m_c=params.m_c, m_1=params.m_1, p_tilde=params.p_tilde,
                       alpha=alpha, beta=beta, p=p, alpha_p=alpha_p, beta_p=beta_p)


def tail_exponent(params: ProblemParams) -> Optional[float]:
    """Decay rate gamma of the Barenblatt profile, F ~ |xi|^{-gamma}.

    sigma/(1-m) below m_1, N + sigma above (including the linear case).
    Returns None at m = m_1 where no law is asserted.
    """
    if not params.m > params.m_c:
        raise DomainError("tail law only defined for m > m_c")
    if math.isclose(params.m, params.m_1, rel_tol=0, abs_tol=1e-14):
        return None
    if params.m < params.m_1:
        return params.sigma / (1.0 - params.m)
    return params.N + params.sigma


def mass_scaling(params: ProblemParams, M: float) -> tuple[float, float]:
    """Amplitude and argument factors of U_M in terms of the unit-mass profile.

    F_M(xi) = amp * F_1(arg * xi) with amp = M^{sigma beta},
    arg = M^{(1-m) beta}.
    """
    ex = exponent_set(params)
    if ex.beta is None:
        raise DomainError("mass scaling needs m > m_c")
    return M ** (params.sigma * ex.beta), M ** ((1.0 - params.m) * ex.beta)


def marcinkiewicz_rescaling(params: ProblemParams, p: float, M: float) -> tuple[float, float]:
    """Return (mu, lambda) so that lambda^mu U_p(lambda x, t) has gauge M.

    mu = sigma/(1-m), lambda = M^{(1-m) beta_p}.
    """
    if params.m >= 1.0:
        raise DomainError("mu = sigma/(1-m) is undefined for m = 1")
    ex = exponent_set(params, p)
    if ex.beta_p is None:
        raise DomainError(f"p={p} must exceed max(1, p_tilde={params.p_tilde})")
    mu = params.sigma / (1.0 - params.m)
    lam = M ** ((1.0 - params.m) * ex.beta_p)
    return mu, lam


def best_constant_linear(N: int) -> float:
    """Sharp L^1 -> L^inf constant for sigma = 1, m = 1 (Poisson kernel)."""
    if int(N) != N or N < 1:
        raise DomainError(f"N must be a positive integer, got {N}")
    return _gamma((N + 1) / 2.0) * math.pi ** (-(N + 1) / 2.0)


def poisson_kernel(r, t: float, N: int):
    """P_t at radius r: C_N t / (t^2 + r^2)^{(N+1)/2}, the sigma = 1 heat kernel."""
    r = np.asarray(r, dtype=float)
    return best_constant_linear(N) * t / (t * t + r * r) ** ((N + 1) / 2.0)


def periodic_poisson_kernel_1d(x, t: float, L: float):
    """Sum of P_t(x + 2Lj) over j: the sigma = 1 heat kernel on a circle of length 2L."""
    x = np.asarray(x, dtype=float)
    a = math.pi / L
    return np.sinh(a * t) / (2 * L * (np.cosh(a * t) - np.cos(a * x)))


@dataclass(frozen=True)
class ExtinctionCoefficients:
    C1: float
    d: float


def extinction_coefficients(params: ProblemParams) -> ExtinctionCoefficients:
    """Amplitude C1 of the explicit vanishing solution and time factor d."""
    if not params.m < params.m_c:
        raise DomainError(f"m={params.m} is not below m_c={params.m_c}: no extinction regime")
    m, s = params.m, params.sigma
    base = (1.0 - m) * kappa(m * s / (1.0 - m), params.N, s)
    return ExtinctionCoefficients(C1=base ** (1.0 / (1.0 - m)), d=1.0 / base)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def signed_power(v, p: float):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.abs(v) ** p


@dataclass(frozen=True)
class Nonlinearity:
    """Diffusion nonlinearity A with its derivative.

    kind is "power" (A = c u^m) or "general".  A lower-bound certificate
    (a, m) states A'(u) >= a u^{m-1}; for a power it is exact.
    """

    kind: str
    A: Callable
    dA: Callable
    a: float
    m: float
    concave: bool
    convex: bool
    coef: float = 1.0
    name: str = ""
    primitive: Optional[Callable] = field(default=None, compare=False)

    @staticmethod
    def power(m: float, coef: float = 1.0) -> "Nonlinearity":
        if m <= 0 or coef <= 0:
            raise DomainError("power nonlinearity needs m > 0 and coef > 0")
        A = lambda u: coef * signed_power(u, m)
        dA = lambda u: coef * m * np.abs(np.asarray(u, dtype=float)) ** (m - 1.0)
        P = lambda u: coef * np.abs(np.asarray(u, dtype=float)) ** (m + 1.0) / (m + 1.0)
        name = f"u^{m:g}" if coef == 1.0 else f"{coef:g}*u^{m:g}"
        return Nonlinearity("power", A, dA, a=coef * m, m=m,
                            concave=m <= 1.0, convex=m >= 1.0, coef=coef,
                            name=name, primitive=P)

    @staticmethod
    def general(A: Callable, dA: Callable, a: float, m: float,
                concave: bool = False, convex: bool = False, name: str = "A",
                primitive: Optional[Callable] = None) -> "Nonlinearity":
        if a <= 0 or m <= 0:
            raise DomainError("certificate needs a > 0 and m > 0")
        return Nonlinearity("general", A, dA, a=a, m=m, concave=concave,
                            convex=convex, name=name, primitive=primitive)

    @staticmethod
    def sqrt_plus_linear() -> "Nonlinearity":
        """A(u) = u^{1/2} + u with certificate (1/2, 1/2)."""
        return Nonlinearity.general(
            lambda u: signed_power(u, 0.5) + np.asarray(u, dtype=float),
            lambda u: 0.5 * np.abs(np.asarray(u, dtype=float)) ** -0.5 + 1.0,
            a=0.5, m=0.5, concave=True, name="u^0.5+u",
            primitive=lambda u: (np.abs(np.asarray(u, dtype=float)) ** 1.5 / 1.5
                                 + 0.5 * np.asarray(u, dtype=float) ** 2))

    def __call__(self, u):
        return self.A(u)

    def check(self, sample: Optional[Sequence[float]] = None) -> None:
        """Spot-check A(0) = 0, A' > 0 and the (a, m) certificate."""
        s = default_sample() if sample is None else np.asarray(sample, dtype=float)
        if abs(float(self.A(np.array([0.0]))[0])) > 1e-14:
            raise DomainError(f"{self.name}: A(0) != 0")
        d = self.dA(s)
        if not np.all(d > 0):
            raise DomainError(f"{self.name}: A' not positive on sample")
        if not np.all(d >= self.a * s ** (self.m - 1.0) * (1 - 1e-12)):
            raise DomainError(f"{self.name}: certificate A' >= a u^(m-1) violated")

    def inverse(self, w, tol: float = 1e-14, maxiter: int = 200):
        """B = A^{-1}, odd extension, vectorized safeguarded Newton."""
        w = np.asarray(w, dtype=float)
        if self.kind == "power":
            return signed_power(w / self.coef, 1.0 / self.m)
        t = np.abs(w)
        lo = np.zeros_like(t)
        hi = np.maximum(t, 1.0)
        # expand the bracket until A(hi) >= t
        for _ in range(200):
            short = self.A(hi) < t
            if not np.any(short):
                break
            hi = np.where(short, 2.0 * hi, hi)
        else:
            raise RuntimeError("could not bracket the inverse of A")
        u = 0.5 * (lo + hi)
        for _ in range(maxiter):
            f = self.A(u) - t
            lo = np.where(f < 0, u, lo)
            hi = np.where(f >= 0, u, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                un = u - f / self.dA(u)
            # fall back to bisection whenever Newton leaves the bracket
            bad = ~np.isfinite(un) | (un <= lo) | (un >= hi)
            un = np.where(bad, 0.5 * (lo + hi), un)
            done = (np.abs(un - u) <= tol * np.maximum(np.abs(un), 1e-300)) | (t == 0)
            u = un
            if np.all(done | (hi - lo <= tol * np.maximum(hi, 1e-300))):
                break
        else:
            raise RuntimeError("inverse of A did not converge")
        u = np.where(t == 0, 0.0, u)
        return np.sign(w) * u

    def inverse_derivative(self, w):
        """B'(w) = 1 / A'(B(w))."""
        w = np.asarray(w, dtype=float)
        if self.kind == "power":
            q = 1.0 / self.m
            return q * self.coef ** (-q) * np.abs(w) ** (q - 1.0)
        u = np.abs(self.inverse(w))
        with np.errstate(divide="ignore"):
            return 1.0 / self.dA(u)


def default_sample() -> np.ndarray:
    """Geometric grid 1e-6 ... 1e6 with 49 points."""
    return np.logspace(-6, 6, 49)


def _merged_sample(sample) -> np.ndarray:
    base = default_sample()
    if sample is None:
        return base
    s = np.asarray(list(sample), dtype=float)
    if s.size == 0:
        raise DomainError("sample must be nonempty")
    if np.any(s <= 0):
        raise DomainError("sample points must be positive")
    return np.unique(np.concatenate([s, base]))


def diffusivity_order(A_tilde: Nonlinearity, A: Nonlinearity,
                      sample: Optional[Sequence[float]] = None,
                      use_default: bool = True) -> bool:
    """True iff A_tilde'(s) <= A'(s) on every sample point.

    The caller's sample is merged with the default geometric grid unless
    use_default is False.
    """
    s = _merged_sample(sample) if use_default else np.asarray(list(sample), dtype=float)
    if s.size == 0:
        raise DomainError("sample must be nonempty")
    dt_, d_ = A_tilde.dA(s), A.dA(s)
    return bool(np.all(dt_ <= d_ * (1.0 + 1e-13)))


def inverse_order_check(A_tilde: Nonlinearity, A: Nonlinearity,
                        sample: Optional[Sequence[float]] = None) -> bool:
    """Check B'(t) <= B_tilde'(t) for the inverses B = A^{-1}, B_tilde = A_tilde^{-1}.

    Requires A_tilde concave and A_tilde' <= A'.  Under these hypotheses the
    answer must be True; False points at a numerical or precondition problem.
    """
    if not A_tilde.concave:
        raise DomainError("A_tilde must be concave")
    if not diffusivity_order(A_tilde, A, sample):
        raise DomainError("A_tilde is not less diffusive than A on the sample")
    t = np.asarray(list(sample) if sample is not None else default_sample(), dtype=float)
    dB = A.inverse_derivative(t)
    dBt = A_tilde.inverse_derivative(t)
    return bool(np.all(dB <= dBt * (1.0 + 1e-10)))
