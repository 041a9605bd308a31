"""Theorem checks with quantified margins.

Each check turns one sharp estimate into a number: the worst ratio of an
observed quantity to its bound over the snapshots of a run.  A check
passes when that ratio is at most 1 + tol, so the verdict can always be
recomputed from the report.

Constants that depend on a profile (F(0), ||F||_p, F_p(0)) are passed
in, normally read from a constants manifest written by the profile
stage.  Nothing here recomputes a profile.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .evolve import Exterior, SolverConfig, Trajectory, _jsonable, evolve
from .exponents import (DomainError, Nonlinearity, ProblemParams, diffusivity_order,
                        exponent_set, extinction_coefficients)
from .rearrange import (Field, Gauge, Grid, concentration_compare, decreasing_rearrangement,
                        marcinkiewicz_gauge, sampled_power_law)
from .rearrange import _shell_order

TOL_PROFILE = 0.05
TOL_CLOSED_FORM = 0.02


class Theorem(enum.Enum):
    SMOOTHING = "Smoothing"
    SMOOTHING_LP = "SmoothingLp"
    MARCINKIEWICZ_SMOOTHING = "MarcinkiewiczSmoothing"
    CONCENTRATION = "ConcentrationComparison"
    DIFFUSIVITY = "DiffusivityComparison"
    EXTINCTION = "ExtinctionBound"


class PreconditionError(ValueError):
    """The hypotheses of the theorem being checked do not hold."""


class CertificateError(ValueError):
    pass


class MonotonicityError(RuntimeError):
    """Truncated runs did not increase with the cap."""


@dataclass
class EstimateReport:
    theorem: Theorem
    worst_margin: float
    tolerance: float
    per_time: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    inconclusive: bool = False

    @property
    def passed(self) -> bool:
        # nan (inconclusive) compares False
        return bool(self.worst_margin <= 1.0 + self.tolerance)

    def as_dict(self) -> dict:
        return _jsonable({"theorem": self.theorem.value, "pass": self.passed,
                          "worst_margin": self.worst_margin, "tolerance": self.tolerance,
                          "inconclusive": self.inconclusive, "per_time": self.per_time,
                          "config": self.config, "notes": self.notes})

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary_row(self, label: str = "") -> dict:
        params = self.config.get("params", {})
        return {"theorem": self.theorem.value, "label": label,
                "params": " ".join(f"{k}={v:g}" for k, v in sorted(params.items())
                                   if isinstance(v, (int, float))),
                "margin": f"{self.worst_margin:.6g}", "pass": int(self.passed)}


def _gate_m(params: ProblemParams):
    if not (params.m_c < params.m <= 1.0):
        raise DomainError(f"m={params.m} outside (m_c={params.m_c:g}, 1]")


def _initial_mass(traj: Trajectory) -> float:
    if traj.initial is not None:
        return traj.initial.field.integral()
    return float(traj.history["mass"][0])


def _snapshots(traj: Trajectory, include_final: bool = True):
    snaps = [s for s in traj.snapshots if s.t > 0]
    if include_final and (not snaps or traj.final.t > snaps[-1].t):
        snaps.append(traj.final)
    return snaps


def _elapsed(traj: Trajectory, t: float, t0: Optional[float]) -> float:
    origin = traj.metadata.get("config", {}).get("t_start", 0.0) if t0 is None else t0
    return t - origin


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------

def check_smoothing_L1(traj: Trajectory, params: ProblemParams, F0: float,
                       tol: float = TOL_PROFILE, t0: Optional[float] = None) -> EstimateReport:
    """||u(t)||_inf t^alpha / ||u0||_1^{sigma beta} <= F0 at every snapshot.

    t0 is the time origin of the bound (default: the start of the run).
    Passing t0 = -1 for a run started from a Barenblatt snapshot at t = 1
    reads the bound relative to the Dirac datum that produced it.
    """
    _gate_m(params)
    ex = exponent_set(params)
    M = _initial_mass(traj)
    rows = []
    for s in _snapshots(traj):
        tau = _elapsed(traj, s.t, t0)
        if tau <= 0:
            continue
        sup = float(np.max(s.field.values))
        ratio = sup * tau ** ex.alpha / (M ** (params.sigma * ex.beta) * F0)
        rows.append({"t": s.t, "sup": sup, "ratio": ratio})
    worst = max(r["ratio"] for r in rows)
    return EstimateReport(Theorem.SMOOTHING, worst, tol, rows,
                          {"params": params.as_dict(), "F0": F0, "mass": M, "t0": t0})


def check_smoothing_Lp(traj: Trajectory, params: ProblemParams, p: float, Cp: float,
                       tol: float = TOL_PROFILE, t0: Optional[float] = None) -> EstimateReport:
    """||u(t)||_p <= Cp ||u0||_1^{(beta/p)(N(m-1)+sigma p)} t^{-alpha(p-1)/p}.

    At p = 1 the bound is Cp ||u0||_1 with no time factor, i.e. mass
    non-increase when Cp = 1.
    """
    _gate_m(params)
    if not 1 <= p < math.inf:
        raise DomainError("need 1 <= p < inf")
    ex = exponent_set(params)
    M = _initial_mass(traj)
    N, m, sg = params.N, params.m, params.sigma
    mexp = (ex.beta / p) * (N * (m - 1.0) + sg * p)
    texp = ex.alpha * (p - 1.0) / p
    rows = []
    for s in _snapshots(traj):
        tau = _elapsed(traj, s.t, t0)
        if tau <= 0:
            continue
        norm = s.field.norm(p)
        bound = Cp * M ** mexp * tau ** (-texp)
        rows.append({"t": s.t, "norm": norm, "bound": bound, "ratio": norm / bound})
    worst = max(r["ratio"] for r in rows)
    return EstimateReport(Theorem.SMOOTHING_LP, worst, tol, rows,
                          {"params": params.as_dict(), "p": p, "Cp": Cp, "mass": M,
                           "mass_exponent": mexp, "time_exponent": texp})


def check_smoothing_marcinkiewicz(traj: Trajectory, params: ProblemParams, p: float,
                                  Fp0: float, tol: float = TOL_PROFILE,
                                  gauge: Optional[float] = None) -> EstimateReport:
    """||u(t)||_inf t^{alpha_p} / M^{sigma beta_p} <= Fp0, M the Coefficient gauge of u0.

    gauge overrides the measured gauge, e.g. with ||u0||_p, which also
    dominates the weak norm.
    """
    ex = exponent_set(params, p)
    if ex.beta_p is None or not p > max(1.0, params.p_tilde):
        raise DomainError(f"p={p} must exceed max(1, p_tilde={params.p_tilde:g})")
    if gauge is None:
        if traj.initial is None:
            raise ValueError("trajectory has no initial field; pass gauge explicitly")
        gauge = marcinkiewicz_gauge(traj.initial.field, p, Gauge.COEFFICIENT)
    rows = []
    for s in _snapshots(traj):
        tau = _elapsed(traj, s.t, None)
        if tau <= 0:
            continue
        sup = float(np.max(s.field.values))
        ratio = sup * tau ** ex.alpha_p / (gauge ** (params.sigma * ex.beta_p) * Fp0)
        rows.append({"t": s.t, "sup": sup, "ratio": ratio})
    worst = max(r["ratio"] for r in rows)
    return EstimateReport(Theorem.MARCINKIEWICZ_SMOOTHING, worst, tol, rows,
                          {"params": params.as_dict(), "p": p, "Fp0": Fp0, "gauge": gauge,
                           "alpha_p": ex.alpha_p, "beta_p": ex.beta_p})


# ---------------------------------------------------------------------------
# concentration comparison
# ---------------------------------------------------------------------------

def _is_radially_nonincreasing(f: Field, rtol: float = 1e-12) -> bool:
    v = np.abs(f.values).ravel()[_shell_order(f.grid)]
    return bool(np.all(np.diff(v) <= rtol * max(float(v.max()), 1e-300)))


def check_concentration_monotone(u0: Field, v0: Field, A: Nonlinearity,
                                 A_tilde: Optional[Nonlinearity], params: ProblemParams,
                                 times: Sequence[float], tol: float = 1e-3,
                                 cfg: Optional[SolverConfig] = None) -> EstimateReport:
    """Evolve u (with A) and v (with A_tilde, or A) and check u^#(t) < v(t).

    The margin is 1 + (largest prefix-sum excess of u^# over v)/||u0||_1,
    combined with the ratios ||u(t)||_p / ||v(t)||_p for p = 1, 2, inf.
    """
    if u0.grid != v0.grid:
        raise ValueError("u0 and v0 must share a grid")
    theorem = Theorem.CONCENTRATION
    B = A
    if A_tilde is not None:
        theorem = Theorem.DIFFUSIVITY
        if not A_tilde.concave:
            raise PreconditionError("A_tilde must be concave")
        if not diffusivity_order(A_tilde, A):
            raise PreconditionError("A_tilde' <= A' fails on the sample")
        B = A_tilde
    elif not A.concave:
        raise PreconditionError("A must be concave")
    if not _is_radially_nonincreasing(v0):
        raise PreconditionError("v0 is not radially non-increasing")
    M = u0.integral()
    scale = max(M, 1e-300)
    pre = concentration_compare(decreasing_rearrangement(u0), decreasing_rearrangement(v0),
                                tol * scale)
    if not pre.holds():
        raise PreconditionError(f"u0^# is not below v0 (excess {pre.max_violation:.3g})")
    times = sorted(float(t) for t in times)
    if cfg is None:
        cfg = SolverConfig(dt_initial=min(1e-3, times[0] / 10), t_end=times[-1],
                           snapshot_times=tuple(times), dt_growth=0.05, lp_orders=(),
                           stop_at_extinction=False)
    tu = evolve(u0, A, params, cfg)
    tv = evolve(v0, B, params, cfg)
    rows = []
    worst = 1.0 + max(pre.max_violation, 0.0) / scale
    for t in times:
        u, v = tu.at(t).field, tv.at(t).field
        rep = concentration_compare(decreasing_rearrangement(u), decreasing_rearrangement(v),
                                    tol * scale)
        ratios = {}
        for p in (1.0, 2.0, math.inf):
            nv = v.norm(p)
            ratios[str(p)] = u.norm(p) / nv if nv > 0 else (0.0 if u.norm(p) == 0 else math.inf)
        m_t = max(1.0 + rep.max_violation / scale, *ratios.values())
        worst = max(worst, m_t)
        rows.append({"t": t, "verdict": rep.verdict.value, "prefix_excess": rep.max_violation,
                     "norm_ratios": ratios, "margin": m_t})
    return EstimateReport(theorem, worst, tol, rows,
                          {"params": params.as_dict(), "A": A.name,
                           "A_tilde": None if A_tilde is None else A_tilde.name,
                           "times": times, "mass": M},
                          {"initial_excess": pre.max_violation})


# ---------------------------------------------------------------------------
# extinction
# ---------------------------------------------------------------------------

def check_extinction_bound(u0: Field, params: ProblemParams, cfg: SolverConfig,
                           tol: float = TOL_CLOSED_FORM, A: Optional[Nonlinearity] = None,
                           exterior: Optional[Exterior] = None,
                           gauge: Optional[float] = None,
                           factor: float = 1.0) -> EstimateReport:
    """Detected extinction time against T_b = factor * d(sigma, m) * M^{1-m}.

    M is the Coefficient gauge of u0 at p = p_tilde.  At every snapshot
    before T_b the run is also compared with the explicit solution
    U(., t; T_b) through rearranged prefix sums; the margin is the larger
    of T / T_b and 1 + (prefix excess)/||u0||_1.  Without extinction by
    t_end the report is inconclusive when t_end <= 2 T_b and failing
    otherwise.
    """
    if not params.m < params.m_c:
        raise DomainError(f"m={params.m} is not below m_c={params.m_c:g}")
    A = A or Nonlinearity.power(params.m)
    coeffs = extinction_coefficients(params)
    if gauge is None:
        gauge = marcinkiewicz_gauge(u0, params.p_tilde, Gauge.COEFFICIENT)
    m = params.m
    T_b = factor * coeffs.d * gauge ** (1.0 - m)
    traj = evolve(u0, A, params, cfg, exterior=exterior)
    T = traj.extinction_time
    rows = []
    act = None if exterior is None else exterior.active
    scale = max(u0.integral(), 1e-300)
    cmp_worst = 1.0
    gamma = params.sigma / (1.0 - m)
    for s in traj.snapshots:
        if not 0 <= s.t < T_b:
            continue
        U = sampled_power_law(u0.grid, gamma, coeffs.C1 * (T_b - s.t) ** (1.0 / (1.0 - m)))
        u = s.field
        if act is not None:
            u = Field(u.grid, np.where(act, u.values, 0.0))
        rep = concentration_compare(decreasing_rearrangement(u), decreasing_rearrangement(U),
                                    tol * scale)
        cmp_worst = max(cmp_worst, 1.0 + rep.max_violation / scale)
        rows.append({"t": s.t, "verdict": rep.verdict.value, "prefix_excess": rep.max_violation})
    notes = {"bound": T_b, "detected": T, "gauge": gauge, "d": coeffs.d,
             "comparison_margin": cmp_worst, "steps": traj.metadata["steps"]}
    conf = {"params": params.as_dict(), "solver": cfg.as_dict(), "factor": factor,
            "A": A.name, "exterior": exterior is not None}
    if T is None:
        inconclusive = cfg.t_end <= 2.0 * T_b
        margin = math.nan if inconclusive else math.inf
        return EstimateReport(Theorem.EXTINCTION, margin, tol, rows, conf, notes, inconclusive)
    margin = max(T / T_b, cmp_worst)
    return EstimateReport(Theorem.EXTINCTION, margin, tol, rows, conf, notes)


# ---------------------------------------------------------------------------
# general nonlinearities
# ---------------------------------------------------------------------------

def check_general_nonlinearity(u0: Field, A: Nonlinearity, params: ProblemParams,
                               cfg: SolverConfig, constant: float, variant: str = "smoothing",
                               tol: float = TOL_PROFILE, sample=None,
                               exterior: Optional[Exterior] = None) -> EstimateReport:
    """Bounds for A with A'(u) >= a u^{m-1}, through the time change t -> (a/m) t.

    smoothing: constant is F(0) for the power m, bound (m/a)^alpha F(0) M^{sigma beta} t^{-alpha}.
    extinction: constant is d(sigma, m) (None uses the closed form), bound
    (m/a) d M^{1-m} with M the p_tilde gauge.
    """
    A.check(sample)
    m, a = A.m, A.a
    if not math.isclose(m, params.m):
        raise CertificateError(f"certificate exponent {m} differs from params.m={params.m}")
    if variant == "smoothing":
        _gate_m(params)
        ex = exponent_set(params)
        traj = evolve(u0, A, params, cfg, exterior=exterior)
        rep = check_smoothing_L1(traj, params, constant * (m / a) ** ex.alpha, tol)
        rep.config.update({"A": A.name, "certificate": [a, m], "variant": variant,
                           "F0_power": constant})
        return rep
    if variant == "extinction":
        d = constant if constant is not None else extinction_coefficients(params).d
        factor = (m / a) * d / extinction_coefficients(params).d
        rep = check_extinction_bound(u0, params, cfg, tol, A=A, exterior=exterior, factor=factor)
        rep.config.update({"certificate": [a, m], "variant": variant})
        return rep
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# minimal solutions
# ---------------------------------------------------------------------------

def minimal_solution_run(u0_singular: Callable, grid: Grid, params: ProblemParams,
                         caps: Sequence[float], cfg: SolverConfig,
                         A: Optional[Nonlinearity] = None, mono_tol: float = 1e-6,
                         exterior: Optional[Exterior] = None) -> Trajectory:
    """Evolve min(u0, cap) for increasing caps and check monotonicity in the cap.

    u0_singular maps radii to values (the origin cell is evaluated at the
    offset used by sampled_power_law).  Snapshots must increase cellwise
    with the cap up to mono_tol times the larger run's sup.  The largest
    cap's trajectory is returned with cap_convergence (relative L^inf gap
    between the two largest caps, over snapshots) in its metadata.
    """
    caps = [float(c) for c in caps]
    if len(caps) < 2 or any(b <= a for a, b in zip(caps, caps[1:])):
        raise DomainError("caps must be strictly increasing, at least two")
    A = A or Nonlinearity.power(params.m)
    r = grid.radius()
    r = np.where(r == 0, 0.5 * grid.h * math.sqrt(grid.N), r)
    base = np.asarray(u0_singular(r), dtype=float)
    prev, gaps, viol = None, [], 0.0
    for cap in caps:
        traj = evolve(Field(grid, np.minimum(base, cap)), A, params, cfg, exterior=exterior)
        if prev is not None:
            worst_gap = 0.0
            for sp, sc in zip(prev.snapshots, traj.snapshots):
                top = max(float(sc.field.values.max()), 1e-300)
                d = sc.field.values - sp.field.values
                viol = max(viol, float(-d.min()) / top)
                worst_gap = max(worst_gap, float(np.abs(d).max()) / top)
            gaps.append(worst_gap)
            if viol > mono_tol:
                raise MonotonicityError(f"cap {cap:g}: snapshots decreased by {viol:.3g} (relative)")
        prev = traj
    traj.metadata.update({"caps": caps, "cap_convergence": gaps[-1], "cap_gaps": gaps,
                          "monotonicity_violation": viol})
    return traj


# ---------------------------------------------------------------------------
# suites and manifests
# ---------------------------------------------------------------------------

def run_suite(checks: Sequence[tuple[str, Callable[[], EstimateReport]]], jobs: int = 1):
    """Run (label, thunk) pairs, at most `jobs` at a time; order is preserved."""
    if jobs <= 1:
        return [(label, fn()) for label, fn in checks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futs = [(label, pool.submit(fn)) for label, fn in checks]
        return [(label, f.result()) for label, f in futs]


SUMMARY_FIELDS = ["theorem", "label", "params", "margin", "pass"]


def write_summary_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for label, rep in results:
            w.writerow(rep.summary_row(label))


def write_constants(path, entries: dict) -> None:
    """Constants manifest: {key: {"params": ..., "F0": ..., "Lp": {p: norm}, ...}}."""
    Path(path).write_text(json.dumps(_jsonable(entries), indent=2, sort_keys=True) + "\n")


def read_constants(path) -> dict:
    return json.loads(Path(path).read_text())


def constants_key(params: ProblemParams, kind: str = "Barenblatt", p: Optional[float] = None) -> str:
    key = f"{kind}:N={params.N}:sigma={params.sigma:g}:m={params.m:g}"
    return key if p is None else key + f":p={p:g}"


# ---------------------------------------------------------------------------
# standard data suites
# ---------------------------------------------------------------------------

def gaussian_bump(grid: Grid, center, width: float, mass: float) -> Field:
    x = grid.coords()
    r2 = sum((xi - c) ** 2 for xi, c in zip(x, center))
    v = np.exp(-0.5 * r2 / width ** 2)
    return Field(grid, mass * v / (v.sum() * grid.cell_measure))


def random_datum(grid: Grid, rng: np.random.Generator, bumps: int = 3,
                 spread: float = 0.3, mass: float = 1.0) -> Field:
    """Sum of Gaussian bumps with random centres, widths and weights, total mass `mass`."""
    vals = np.zeros(grid.shape)
    for _ in range(bumps):
        c = rng.uniform(-spread, spread, grid.N) * grid.L
        w = rng.uniform(0.03, 0.1) * grid.L
        vals += rng.uniform(0.2, 1.0) * gaussian_bump(grid, c, w, 1.0).values
    return Field(grid, mass * vals / (vals.sum() * grid.cell_measure))


def smoothing_data(grid: Grid, seed: int, count: int = 10) -> list:
    """(label, u0) pairs: a Dirac approximation, two separated bumps, random data."""
    from .selfsim import dirac_datum
    rng = np.random.default_rng(seed)
    out = [("dirac", dirac_datum(grid, 1.0, 2.0))]
    off = np.zeros(grid.N)
    off[0] = 0.25 * grid.L
    two = gaussian_bump(grid, off, 0.02 * grid.L, 0.5).values \
        + gaussian_bump(grid, -off, 0.02 * grid.L, 0.5).values
    out.append(("two_bumps", Field(grid, two)))
    for i in range(count - 2):
        out.append((f"random_{i}", random_datum(grid, rng, mass=float(rng.uniform(0.5, 2.0)))))
    return out


def smoothing_suite(params: ProblemParams, F0: float, grid: Grid, seed: int = 0,
                    count: int = 10, times: Sequence[float] = (0.5, 1.0, 2.0, 4.0),
                    tol: float = TOL_CLOSED_FORM, dt_growth: float = 0.005):
    A = Nonlinearity.power(params.m)
    times = tuple(sorted(times))

    def make(u0):
        def run():
            cfg = SolverConfig(dt_initial=1e-4 * times[0], t_end=times[-1], snapshot_times=times,
                               dt_growth=dt_growth, lp_orders=(), stop_at_extinction=False)
            return check_smoothing_L1(evolve(u0, A, params, cfg), params, F0, tol)
        return run
    return [(label, make(u0)) for label, u0 in smoothing_data(grid, seed, count)]


def concentration_pairs(grid: Grid, seed: int, count: int = 20) -> list:
    """Random (u0, v0) with v0 = u0^# plus a random radial surplus, so u0^# < v0 exactly.

    Half the pairs have no surplus (v0 = u0^#), the tightest case.
    """
    from .rearrange import spherical_rearrangement
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        u0 = random_datum(grid, rng, bumps=int(rng.integers(1, 4)))
        v = spherical_rearrangement(u0).values
        if i % 2:
            v = v + rng.uniform(0.05, 0.3) * gaussian_bump(
                grid, np.zeros(grid.N), rng.uniform(0.03, 0.1) * grid.L, 1.0).values
        out.append((f"pair_{i}", u0, Field(grid, v)))
    return out


def concentration_suite(params: ProblemParams, grid: Grid, seed: int = 0, count: int = 20,
                        times: Sequence[float] = (0.05, 0.1, 0.2, 0.4, 0.8),
                        nonlinearities: Optional[Sequence[Nonlinearity]] = None,
                        diffusivity: bool = True, tol: float = 1e-3):
    """Concentration comparison checks for each concave A, and the u^{1/2} < u^{1/2} + u variant."""
    As = nonlinearities or [Nonlinearity.power(0.5), Nonlinearity.power(0.8)]
    pairs = concentration_pairs(grid, seed, count)
    checks = []

    def make(u0, v0, A, At):
        return lambda: check_concentration_monotone(u0, v0, A, At, params, times, tol)
    for A in As:
        for label, u0, v0 in pairs:
            checks.append((f"{A.name}:{label}", make(u0, v0, A, None)))
    if diffusivity:
        A, At = Nonlinearity.sqrt_plus_linear(), Nonlinearity.power(0.5)
        for label, u0, v0 in pairs:
            checks.append((f"{At.name}<{A.name}:{label}", make(u0, v0, A, At)))
    return checks


def explicit_extinction_setup(params: ProblemParams, n: int, L: float = 1.0,
                              T: float = 1.0, radius: float = 0.9):
    """Explicit vanishing solution truncated to a ball, with the solution itself outside.

    Data c |x|^{-sigma/(1-m)} of any amplitude c are of this form for some
    T, e.g. half the T = 1 datum is the T = 2^{-(1-m)} datum.  Returns
    (u0, exterior, gauge), the gauge being that of the datum inside the ball.
    """
    from .selfsim import explicit_extinction_solution
    sol = explicit_extinction_solution(params, T)
    grid = Grid(params.N, L, n)
    active = grid.radius() < radius
    u0 = Field(grid, np.where(active, sol.field(grid, 0.0).values, 0.0))
    ext = Exterior(active, lambda t: sol.field(grid, min(t, T)).values)
    gauge = marcinkiewicz_gauge(u0, params.p_tilde, Gauge.COEFFICIENT)
    return u0, ext, gauge
