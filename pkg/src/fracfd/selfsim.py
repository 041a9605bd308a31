"""Self-similar solutions: Barenblatt and Marcinkiewicz profiles, the explicit
vanishing solution, power-law tail fits and elliptic residuals.

Profiles are measured, not solved for: a Dirac-like (or truncated power)
datum is evolved forward, snapshots at several times are rescaled by
(t^alpha, t^beta) and compared.  Barenblatt runs regrid by doubling the
box whenever the solution has doubled in size, which keeps the grid
resolution fixed in similarity variables.
"""
from __future__ import annotations

import csv
import json
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .evolve import SolverConfig, evolve, zoom_out
from .exponents import (DomainError, Nonlinearity, ProblemParams, exponent_set,
                        extinction_coefficients, kappa, kappa_continued,
                        tail_exponent)
from .fraclap import (SpectralOperator, lattice_power_sum, normalization_constant,
                      periodic_power_law_field)
from .rearrange import Field, Grid, omega, sampled_power_law

N_RADIAL = 512


class CollapseError(RuntimeError):
    """Rescaled snapshots disagree beyond tolerance (usually under-resolution)."""


class CapSensitivityError(RuntimeError):
    """Profiles from the two largest caps differ beyond tolerance."""


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class TailFit:
    exponent: float
    stderr: float
    ci: tuple
    amplitude: float
    window: tuple
    samples: int

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr, "ci": list(self.ci),
                "amplitude": self.amplitude, "window": list(self.window), "samples": self.samples}


def tail_exponent_fit(xi, F, window: Optional[tuple] = None, xi_max: Optional[float] = None,
                      level: float = 0.95, min_samples: int = 10) -> TailFit:
    """Least-squares slope of log F against log xi, reported as a decay rate.

    The window defaults to [xi_max/4, xi_max/2].  The interval is the usual
    t-interval for the slope.
    """
    xi = np.asarray(xi, dtype=float)
    F = np.asarray(F, dtype=float)
    if window is None:
        if xi_max is None:
            xi_max = float(xi.max())
        window = (xi_max / 4.0, xi_max / 2.0)
    sel = (xi >= window[0]) & (xi <= window[1]) & (F > 0)
    k = int(sel.sum())
    if k < min_samples:
        raise InsufficientSamplesError(f"{k} samples in the fit window, need {min_samples}")
    x, y = np.log(xi[sel]), np.log(F[sel])
    res = stats.linregress(x, y)
    se = float(res.stderr)
    q = float(stats.t.ppf(0.5 + level / 2.0, k - 2))
    g = -float(res.slope)
    return TailFit(g, se, (g - q * se, g + q * se), float(math.exp(res.intercept)),
                   (float(window[0]), float(window[1])), k)


# ---------------------------------------------------------------------------
# radial sampling
# ---------------------------------------------------------------------------

def shell_average(f: Field, scale: float = 1.0, amp: float = 1.0):
    """Shell means of a Cartesian field, radii multiplied by scale, values by amp.

    Returns (radii, values) with the origin cell first at radius 0.  Shells
    have width h (h/2 in one dimension, where every shell is a pair of cells).
    """
    g = f.grid
    r = g.radius().ravel()
    v = f.values.ravel()
    width = g.h if g.N > 1 else 0.5 * g.h
    b = np.rint(r / width).astype(np.int64)
    cnt = np.bincount(b)
    keep = cnt > 0
    rs = np.bincount(b, weights=r)[keep] / cnt[keep]
    vs = np.bincount(b, weights=v)[keep] / cnt[keep]
    o = g.origin_index
    rs[0], vs[0] = 0.0, float(f.values[o])
    return rs * scale, vs * amp


def radial_grid(xi_max: float, h_xi: float, n: int = N_RADIAL) -> np.ndarray:
    return np.logspace(math.log10(0.5 * h_xi), math.log10(xi_max), n)


def _interp(xs, ys, x):
    return np.interp(x, xs, ys)


@dataclass
class SelfSimilarProfile:
    kind: str
    params: ProblemParams
    M: float
    xi: np.ndarray
    F: np.ndarray
    F0: float
    alpha: float
    beta: float
    xi_max: float
    h_xi: float
    tail: Optional[TailFit] = None
    p: Optional[float] = None
    collapse: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if np.any(F <= 0) or np.any(np.diff(F) > 1e-12 * F[0]):
            raise DomainError("profile must be positive and non-increasing")

    def __call__(self, xi) -> np.ndarray:
        """Interpolated profile, extended by the tail power law beyond xi_max."""
        xi = np.asarray(xi, dtype=float)
        ins = np.interp(xi, np.concatenate([[0.0], self.xi]),
                        np.concatenate([[self.F0], self.F]))
        if self.tail is None:
            out = np.where(xi <= self.xi[-1], ins, self.F[-1])
        else:
            g = self.tail.exponent
            with np.errstate(divide="ignore"):
                ext = self.F[-1] * (np.maximum(xi, self.xi[-1]) / self.xi[-1]) ** (-g)
            out = np.where(xi <= self.xi[-1], ins, ext)
        return out

    def field(self, grid: Grid) -> Field:
        return Field(grid, self(grid.radius()))

    def mass(self, xi_cut: Optional[float] = None) -> float:
        """Radial integral of F up to xi_cut (defaults to the trusted window)."""
        return self.norm(1.0, xi_cut)

    def norm(self, p: float, xi_cut: Optional[float] = None) -> float:
        N = self.params.N
        xc = self.xi_max if xi_cut is None else xi_cut
        x = np.concatenate([[0.0], np.geomspace(self.xi[0], xc, 4096)])
        y = self(x)
        area = N * omega(N)
        if math.isinf(p):
            return float(self.F0)
        return float(np.trapezoid(area * x ** (N - 1) * y ** p, x) ** (1.0 / p))

    def gauge(self, p: float) -> float:
        """Coefficient gauge sup xi^{N/p} F(xi) on the trusted window."""
        return float(np.max(self.xi ** (self.params.N / p) * self.F))

    def summary(self) -> dict:
        d = {"kind": self.kind, "params": self.params.as_dict(), "M": self.M, "p": self.p,
             "F0": self.F0, "alpha": self.alpha, "beta": self.beta, "xi_max": self.xi_max,
             "h_xi": self.h_xi, "collapse": self.collapse,
             "tail_fit": None if self.tail is None else self.tail.as_dict()}
        d.update(self.metadata)
        return d

    def export(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["xi", "F"])
            for a, b in zip(self.xi, self.F):
                w.writerow([repr(float(a)), repr(float(b))])
        jp = Path(json_path) if json_path else csv_path.with_suffix(".json")
        jp.write_text(json.dumps(_clean(self.summary()), indent=2, sort_keys=True) + "\n")


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _rescaled(f: Field, t: float, alpha: float, beta: float, xi: np.ndarray) -> np.ndarray:
    rs, vs = shell_average(f, scale=t ** (-beta), amp=t ** alpha)
    return _interp(rs, vs, xi)


def collapse_metric(profiles: Sequence[np.ndarray]) -> float:
    """Largest pairwise sup-distance relative to the smaller central value."""
    worst = 0.0
    for i in range(len(profiles)):
        for j in range(i + 1, len(profiles)):
            a, b = profiles[i], profiles[j]
            worst = max(worst, float(np.max(np.abs(a - b)) / min(a.max(), b.max())))
    return worst


def dirac_datum(grid: Grid, M: float, rho_cells: float = 4.0) -> Field:
    """Mass M spread uniformly over the cells within rho = rho_cells*h of the origin."""
    ball = grid.radius() <= rho_cells * grid.h + 1e-12 * grid.h
    v = np.where(ball, 1.0, 0.0)
    v *= M / (v.sum() * grid.cell_measure)
    return Field(grid, v)


def _monotone(F: np.ndarray) -> tuple[np.ndarray, float]:
    env = np.minimum.accumulate(F)
    defect = float(np.max(F - env) / F[0]) if F.size else 0.0
    return env, defect


# ---------------------------------------------------------------------------
# Barenblatt
# ---------------------------------------------------------------------------

class FarField:
    """Far-field law sum_i a_i(t) |x|^{-g_i} of the Barenblatt solution.

    For m_c < m < m_1 the leading term is the explicit growing solution
    C t^{1/(1-m)} |x|^{-sigma/(1-m)} with C^{1-m} = -(1-m) kappa(m sigma/(1-m))
    (kappa is negative there), independent of the mass.  The core adds a
    kernel-type correction b |x|^{-N-sigma}; since it decays only |x|^{-1/2}
    faster in two dimensions, b is fitted to the run.  For m_1 < m <= 1
    the law is c_{N,sigma} |x|^{-N-sigma} int_0^t ||U^m(s)||_1 ds with
    ||U^m(s)||_1 = K s^{N beta (1-m)}, K measured (K = M when m = 1).
    At m = m_1 no closure is available.
    """

    def __init__(self, params: ProblemParams, M: float, correction: bool = True):
        self.params, self.M = params, M
        m, s, N = params.m, params.sigma, params.N
        self.K = None
        self.b = 0.0
        self.correction = correction
        self.regime = "none"
        self.kernel_gamma = N + s
        if m < params.m_1 and not math.isclose(m, params.m_1):
            self.regime = "explicit"
            self.gamma = s / (1.0 - m)
            self.C = (-(1.0 - m) * kappa_continued(m * s / (1.0 - m), N, s)) ** (1.0 / (1.0 - m))
        elif m > params.m_1 and not math.isclose(m, params.m_1):
            self.regime = "kernel"
            self.gamma = N + s
            self.q = N * exponent_set(params).beta * (1.0 - m)
            self.cns = normalization_constant(N, s)
            if m == 1.0:
                self.K = M

    @property
    def active(self) -> bool:
        return self.regime == "explicit" or (self.regime == "kernel" and self.K is not None)

    def terms(self, t: float) -> list:
        if self.regime == "explicit":
            out = [(self.C * t ** (1.0 / (1.0 - self.params.m)), self.gamma)]
            if self.b != 0.0:
                out.append((self.b, self.kernel_gamma))
            return out
        if self.active:
            return [(self.cns * self.K * t ** (1.0 + self.q) / (1.0 + self.q), self.gamma)]
        return []

    def update(self, f: Field, t: float, iterations: int = 3) -> None:
        """Refresh the measured parts of the law from a periodic field at time t."""
        if t <= 0:
            return
        if self.regime == "kernel" and self.params.m != 1.0:
            self.K = float(np.sum(f.values ** self.params.m) * f.grid.cell_measure) / t ** self.q
        if self.regime != "explicit" or not self.correction:
            return
        g = f.grid
        lead, gam = self.terms(t)[0]
        img_lead = _image_sum(g, gam)
        img_k = _image_sum(g, self.kernel_gamma)
        r = g.radius()
        sel = (r >= g.L / 4) & (r <= g.L / 2)
        basis = r[sel] ** (-self.kernel_gamma)
        for _ in range(iterations):
            free = f.values - lead * img_lead - self.b * img_k
            d = free[sel] - lead * r[sel] ** (-gam)
            self.b = float(np.dot(d, basis) / np.dot(basis, basis))


def _image_sum(grid: Grid, s: float) -> np.ndarray:
    """Sum over R != 0 in 2L Z^N of |x + R|^{-s} at the grid points (L = grid.L).

    The sum is computed once per (N, n, s) on the unit box and scaled by
    L^{-s}, which is exact since the grid points scale with L.
    """
    return _unit_image_sum(grid.N, grid.n, float(s)) * grid.L ** (-s)


@functools.lru_cache(maxsize=16)
def _unit_image_sum(N: int, n: int, s: float, chunk: int = 1 << 18) -> np.ndarray:
    g = Grid(N, 1.0, n)
    pts = g.points()
    out = np.empty(g.size)
    for i in range(0, g.size, chunk):
        out[i:i + chunk] = lattice_power_sum(pts[i:i + chunk], s, N, 1.0,
                                             exclude_origin_term=True)
    out = out.reshape(g.shape)
    out.setflags(write=False)
    return out


def _images(grid: Grid, terms) -> np.ndarray:
    out = np.zeros(grid.shape)
    for a, g in terms:
        out += a * _image_sum(grid, g)
    return out


def _unfolded(f: Field, t: float, ff: Optional[FarField]) -> Field:
    """Subtract the far-field tails of the periodic copies from a snapshot."""
    if ff is None:
        return f
    ff.update(f, t)
    if not ff.active:
        return f
    return Field(f.grid, f.values - _images(f.grid, ff.terms(t)))


def unfold_zoom(f: Field, terms) -> Field:
    """Double the box of a periodic field with far field sum a_i |x|^{-g_i}.

    The tails of the periodic copies are subtracted, the doubled box is
    filled with the far-field law outside the old box, and the copies at
    the new period are added back.  With no terms this is zoom_out.
    """
    if not terms:
        return zoom_out(f)
    g = f.grid
    z = zoom_out(Field(g, f.values - _images(g, terms)))
    G = z.grid
    n = G.n
    outside = np.ones(G.shape, dtype=bool)
    outside[tuple(slice(n // 4, n // 4 + n // 2) for _ in range(G.N))] = False
    r = G.radius()
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = sum(a * r ** (-gm) for a, gm in terms)
    vals = np.where(outside, tail, z.values) + _images(G, terms)
    return Field(G, np.maximum(vals, 0.0))


def barenblatt_profile(params: ProblemParams, M: float, resolution: Grid,
                       times: Sequence[float] = (1.0, 2.0, 4.0), A: Optional[Nonlinearity] = None,
                       pre_zooms: int = 4, dt_growth: float = 0.005, rho_cells: float = 4.0,
                       far_field: bool = True,
                       collapse_tol: float = 0.02, newton_tol: float = 1e-10,
                       strict: bool = True) -> SelfSimilarProfile:
    """Measure the Barenblatt profile of mass M by forward evolution.

    resolution is the grid on which the t = 1 snapshot is taken.  The run
    starts at t = 0 on a box pre_zooms doublings smaller, from a ball of
    radius rho_cells*h, and doubles the box each time t^beta doubles
    (pre_zooms = 0 keeps a single grid throughout).  With far_field, each
    doubling uses unfold_zoom with the far-field law of FarField, refreshed
    from the run; otherwise the new cells are zero and the image tails stay
    folded into the old box.
    """
    ex = exponent_set(params)
    if not (params.m_c < params.m <= 1.0):
        raise DomainError(f"Barenblatt profiles need m in (m_c, 1], got m={params.m}")
    if not M > 0:
        raise DomainError("M must be positive")
    alpha, beta = ex.alpha, ex.beta
    A = A or Nonlinearity.power(params.m)
    times = sorted(float(t) for t in times)
    N, n = resolution.N, resolution.n
    zooming = pre_zooms > 0
    step = 2.0 ** (1.0 / beta)
    ff = FarField(params, M) if (far_field and A.kind == "power") else None
    t = 0.0
    grid = Grid(N, resolution.L * 2.0 ** (-pre_zooms), n)
    u = dirac_datum(grid, M, rho_cells)
    # segment j covers [step^j, step^(j+1)] on a box of half-width L 2^(j+1)
    j = -pre_zooms - 1
    snaps = {}
    history = []
    while True:
        t_stop = min(step ** (j + 1), times[-1]) if zooming else times[-1]
        # a time on a segment end belongs to that segment, not the zoomed restart
        inner = [s for s in times if s not in snaps and t < s <= t_stop * (1 + 1e-12)]
        dt0 = dt_growth * (t if t > 0 else 0.01 * min(t_stop, 1.0))
        cfg = SolverConfig(dt_initial=dt0, t_end=t_stop, t_start=t,
                           snapshot_times=tuple(min(s, t_stop) for s in inner),
                           dt_growth=dt_growth, newton_tol=newton_tol, lp_orders=(),
                           stop_at_extinction=False)
        traj = evolve(u, A, params, cfg)
        for s_, snap in zip(inner, traj.snapshots):
            snaps[s_] = _unfolded(snap.field, s_, ff)
        history.append({"t_start": t, "t_end": t_stop, "L": grid.L,
                        "steps": traj.metadata["steps"],
                        "clipped_mass": traj.metadata["clipped_mass"]})
        u, t = traj.final.field, t_stop
        if t_stop >= times[-1] * (1 - 1e-12):
            break
        if ff is not None:
            ff.update(u, t)
            u = unfold_zoom(u, ff.terms(t))
        else:
            u = zoom_out(u)
        grid = u.grid
        j += 1

    # trusted window is L(t) t^{-beta} / 2, smallest over the snapshots
    xi_max = min(snaps[s].grid.L * s ** (-beta) / 2.0 for s in times)
    h_xi = max(snaps[s].grid.h * s ** (-beta) for s in times)
    xi = radial_grid(xi_max, h_xi)
    profs = [_rescaled(snaps[s], s, alpha, beta, xi) for s in times]
    centres = [float(snaps[s].values[snaps[s].grid.origin_index]) * s ** alpha for s in times]
    metric = collapse_metric(profs)
    if strict and metric > collapse_tol:
        raise CollapseError(f"rescaled profiles differ by {metric:.3g} > {collapse_tol}")
    F, defect = _monotone(np.mean(profs, axis=0))
    F0 = float(np.mean(centres))
    masses = {str(s): float(snaps[s].integral()) for s in times}
    try:
        fit = tail_exponent_fit(xi, F, xi_max=xi_max)
    except InsufficientSamplesError:
        fit = None
    meta = {"times": times, "segments": history, "monotone_defect": defect,
            "snapshot_masses": masses, "expected_tail": tail_exponent(params),
            "F0_per_time": centres, "resolution": resolution.as_dict(), "pre_zooms": pre_zooms,
            "dt_growth": dt_growth, "rho_cells": rho_cells,
            "far_field": None if ff is None else ff.regime}
    return SelfSimilarProfile("Barenblatt", params, M, xi, F, F0, alpha, beta, xi_max, h_xi,
                              tail=fit, collapse=metric, metadata=meta)


# ---------------------------------------------------------------------------
# Marcinkiewicz
# ---------------------------------------------------------------------------

def truncated_power_datum(grid: Grid, p: float, M: float, cap: float,
                          averaged: bool = True, near: int = 4, sub: int = 16) -> Field:
    """Cell averages of min(M|x|^{-N/p}, cap).

    Point samples lose a fraction of order h^{N-N/p} of the mass near the
    singularity, which is felt at the centre long after t = 0.  In one
    dimension the averages are exact; otherwise cells within `near` cells
    of the origin use sub^N midpoint subsamples.  averaged=False returns
    the capped point samples.
    """
    s = grid.N / p
    if not averaged:
        u = sampled_power_law(grid, s, M)
        return Field(grid, np.minimum(u.values, cap))
    h = grid.h
    rc = (M / cap) ** (1.0 / s)
    if grid.N == 1:
        def G(x):
            # integral of min(M y^{-s}, cap) over [0, x], x >= 0
            x = np.asarray(x, dtype=float)
            inner = cap * np.minimum(x, rc)
            outer = M * (np.maximum(x, rc) ** (1 - s) - rc ** (1 - s)) / (1 - s)
            return inner + outer

        x = grid.axis
        a, b = x - 0.5 * h, x + 0.5 * h
        sgn = lambda v: np.sign(v) * G(np.abs(v))
        return Field(grid, (sgn(b) - sgn(a)) / h)
    r = grid.radius()
    vals = np.minimum(M * np.where(r > 0, r, 1.0) ** (-s), cap)
    off = (np.arange(sub) + 0.5) / sub - 0.5
    offs = np.stack(np.meshgrid(*([off * h] * grid.N), indexing="ij"), axis=-1).reshape(-1, grid.N)
    o = np.array(grid.origin_index)
    for idx in np.ndindex(*([2 * near + 1] * grid.N)):
        j = o + np.array(idx) - near
        c = grid.axis[j]
        rr = np.linalg.norm(c + offs, axis=1)
        vals[tuple(j)] = float(np.mean(np.minimum(M * rr ** (-s), cap)))
    return Field(grid, vals)


def marcinkiewicz_profile(params: ProblemParams, p: float, M: float, resolution: Grid,
                          caps: Sequence[float] = (4.0, 8.0), times: Sequence[float] = (1.0, 2.0, 4.0),
                          A: Optional[Nonlinearity] = None, dt_initial: float = 1e-3,
                          dt_growth: float = 0.02, collapse_tol: float = 0.02,
                          cap_tol: float = 0.02, newton_tol: float = 1e-10,
                          strict: bool = True) -> SelfSimilarProfile:
    """Self-similar solution with datum M|x|^{-N/p}, from truncations min(., cap).

    Each cap is a separate run on the same grid; the largest cap gives the
    profile, and the two largest are compared for cap sensitivity.
    """
    if params.m >= 1.0:
        raise DomainError("mu = sigma/(1-m) is undefined for m >= 1")
    ex = exponent_set(params, p)
    if ex.beta_p is None or not p > max(1.0, params.p_tilde):
        raise DomainError(f"p={p} must exceed max(1, p_tilde={params.p_tilde:g})")
    if not M > 0:
        raise DomainError("M must be positive")
    caps = sorted(float(c) for c in caps)
    if len(caps) < 2:
        raise DomainError("need at least two caps")
    alpha, beta = ex.alpha_p, ex.beta_p
    A = A or Nonlinearity.power(params.m)
    times = sorted(float(t) for t in times)
    g = resolution
    xi_max = min(g.L * s ** (-beta) / 2.0 for s in times)
    h_xi = max(g.h * s ** (-beta) for s in times)
    xi = radial_grid(xi_max, h_xi)
    runs = []
    for cap in caps[-2:]:
        cfg = SolverConfig(dt_initial=dt_initial, t_end=times[-1], snapshot_times=tuple(times),
                           dt_growth=dt_growth, newton_tol=newton_tol, lp_orders=(),
                           stop_at_extinction=False)
        traj = evolve(truncated_power_datum(g, p, M, cap), A, params, cfg)
        profs = [_rescaled(traj.at(s).field, s, alpha, beta, xi) for s in times]
        centres = [float(traj.at(s).field.values[g.origin_index]) * s ** alpha for s in times]
        runs.append((cap, profs, centres, traj.metadata["steps"]))
    cap, profs, centres, steps = runs[-1]
    metric = collapse_metric(profs)
    if strict and metric > collapse_tol:
        raise CollapseError(f"rescaled profiles differ by {metric:.3g} > {collapse_tol}")
    sens = collapse_metric([np.mean(runs[0][1], axis=0), np.mean(profs, axis=0)])
    if strict and sens > cap_tol:
        raise CapSensitivityError(f"caps {runs[0][0]:g} and {cap:g} differ by {sens:.3g}")
    F, defect = _monotone(np.mean(profs, axis=0))
    try:
        fit = tail_exponent_fit(xi, F, xi_max=xi_max)
    except InsufficientSamplesError:
        fit = None
    meta = {"times": times, "caps": caps, "cap_sensitivity": sens, "monotone_defect": defect,
            "F0_per_time": centres, "expected_tail": params.N / p, "steps": steps,
            "resolution": g.as_dict(), "dt_growth": dt_growth}
    return SelfSimilarProfile("Marcinkiewicz", params, M, xi, F, float(np.mean(centres)),
                              alpha, beta, xi_max, h_xi, tail=fit, p=p, collapse=metric,
                              metadata=meta)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def elliptic_residual(profile: SelfSimilarProfile, grid: Optional[Grid] = None,
                      inner: float = 0.0, outer: Optional[float] = None) -> float:
    """Relative L^2 residual of (-Delta)^{sigma/2} F^m - alpha F - beta xi.grad F.

    The profile is laid out on a periodic grid (by default spanning twice
    the trusted window, spacing from the measurement) and the residual is
    taken over inner <= |xi| <= outer, outer defaulting to xi_max/2.  The
    norm is relative to the L^2 norm of the diffusion term.
    """
    prm = profile.params
    if grid is None:
        n = 2 * int(2 ** math.ceil(math.log2(2.0 * profile.xi_max / profile.h_xi)))
        n = min(n, {1: 1 << 16, 2: 1024, 3: 128}[prm.N])
        grid = Grid(prm.N, 2.0 * profile.xi_max, n)
    outer = profile.xi_max / 2.0 if outer is None else outer
    F = profile(grid.radius())
    op = SpectralOperator(grid, prm.sigma)
    diff = op.apply_array(F ** prm.m)
    grad_term = np.zeros_like(F)
    for ax, x in enumerate(grid.coords()):
        dF = (np.roll(F, -1, axis=ax) - np.roll(F, 1, axis=ax)) / (2.0 * grid.h)
        grad_term += x * dF
    res = diff - profile.alpha * F - profile.beta * grad_term
    r = grid.radius()
    sel = (r >= inner) & (r <= outer)
    return float(np.linalg.norm(res[sel]) / np.linalg.norm(diff[sel]))


def poisson_profile(N: int, tail_points: int = N_RADIAL, xi_max: float = 20.0,
                    h_xi: float = 0.01) -> SelfSimilarProfile:
    """The exact sigma = 1, m = 1 profile C_N (1 + xi^2)^{-(N+1)/2}, M = 1."""
    from .exponents import poisson_kernel

    prm = ProblemParams(N, 1.0, 1.0)
    xi = radial_grid(xi_max, h_xi, tail_points)
    F = poisson_kernel(xi, 1.0, N)
    fit = tail_exponent_fit(xi, F, xi_max=xi_max)
    return SelfSimilarProfile("Barenblatt", prm, 1.0, xi, F, float(poisson_kernel(0.0, 1.0, N)),
                              float(N), 1.0, xi_max, h_xi, tail=fit, metadata={"exact": True})


@dataclass(frozen=True)
class ExplicitExtinctionSolution:
    """U(x, t; T) = C1 (T - t)^{1/(1-m)} |x|^{-sigma/(1-m)}."""

    params: ProblemParams
    T: float
    C1: float

    @property
    def gamma(self) -> float:
        return self.params.sigma / (1.0 - self.params.m)

    def amplitude(self, t: float) -> float:
        if not t >= 0:
            raise DomainError("t must be nonnegative")
        return self.C1 * max(self.T - t, 0.0) ** (1.0 / (1.0 - self.params.m))

    def __call__(self, r, t: float) -> np.ndarray:
        """Value at radius r (array)."""
        with np.errstate(divide="ignore"):
            return self.amplitude(t) * np.abs(np.asarray(r, dtype=float)) ** (-self.gamma)

    def at_points(self, x, t: float) -> np.ndarray:
        return self(np.linalg.norm(np.asarray(x, dtype=float), axis=-1), t)

    def field(self, grid: Grid, t: float) -> Field:
        """Sampled on a grid, the origin cell at the offset radius h sqrt(N)/2."""
        return sampled_power_law(grid, self.gamma, self.amplitude(t))

    def residual(self, grid: Grid, t: float, inner: float = 0.15, outer: float = 0.4) -> dict:
        """Discrete residual of U_t + (-Delta)^{sigma/2} U^m on an annulus.

        Both terms are periodized: U^m is the lattice sum of the power with
        a regularized origin, and U_t is compared with its own lattice sum.
        Relative to |U_t| pointwise; returns max and RMS.
        """
        prm = self.params
        m, s = prm.m, prm.sigma
        a = s * m / (1.0 - m)
        tau = max(self.T - t, 0.0)
        amp_m = self.C1 ** m * tau ** (m / (1.0 - m))
        amp_t = self.C1 / (1.0 - m) * tau ** (m / (1.0 - m))
        Um = periodic_power_law_field(grid, a)
        LUm = amp_m * SpectralOperator(grid, s).apply_array(Um.values).ravel()
        r = grid.radius().ravel()
        idx = np.flatnonzero((r > inner * grid.L) & (r < outer * grid.L))
        if idx.size > 4000:
            idx = idx[:: idx.size // 4000]
        Ut = -amp_t * lattice_power_sum(grid.points()[idx], a + s, prm.N, grid.L)
        scale = amp_t * r[idx] ** (-a - s)
        err = np.abs(Ut + LUm[idx]) / scale
        return {"max_rel": float(err.max()), "rms_rel": float(np.sqrt(np.mean(err ** 2))),
                "points": int(idx.size), "kappa": kappa(a, prm.N, s)}


def explicit_extinction_solution(params: ProblemParams, T: float) -> ExplicitExtinctionSolution:
    if not (0.0 < params.m < params.m_c):
        raise DomainError(f"explicit vanishing solution needs 0 < m < m_c = {params.m_c:g}")
    if not T > 0:
        raise DomainError("T must be positive")
    return ExplicitExtinctionSolution(params, float(T), extinction_coefficients(params).C1)
