"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict (printed in the terminal summary)
before asserting, so a failing criterion still reports its measurements.
These runs are the slow part of the suite (about ten minutes on one core).
"""
import json
import math

import numpy as np
import pytest

from conftest import record
from fracfd.cli import EXIT_OK, main
from fracfd.evolve import SolverConfig, evolve
from fracfd.exponents import (Nonlinearity, ProblemParams, best_constant_linear, kappa,
                              marcinkiewicz_rescaling, mass_scaling, periodic_poisson_kernel_1d,
                              tail_exponent)
from fracfd.fraclap import power_law_identity_error
from fracfd.rearrange import (Field, Grid, RadialProfile, concentration_compare,
                              convex_test_compare, decreasing_rearrangement, distribution_function,
                              marcinkiewicz_gauge, profile_distribution, sampled_power_law,
                              spherical_rearrangement)
from fracfd.selfsim import (barenblatt_profile, elliptic_residual, explicit_extinction_solution,
                            marcinkiewicz_profile, poisson_profile)
from fracfd.verify import (check_extinction_bound, concentration_suite, explicit_extinction_setup,
                           run_suite, smoothing_suite)

pytestmark = pytest.mark.acceptance

LIN = {N: ProblemParams(N, 1.0, 1.0) for N in (1, 2)}
FAST2 = ProblemParams(2, 1.0, 0.6)
MARC = ProblemParams(1, 1.0, 0.5)
EXT = ProblemParams(3, 1.0, 0.5)


def _fmt(x):
    return f"{x:.4g}"


# ---------------------------------------------------------------------------
# shared measurements
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def linear_profiles():
    return {1: barenblatt_profile(LIN[1], 1.0, Grid(1, 40.0, 1024), pre_zooms=6),
            2: barenblatt_profile(LIN[2], 1.0, Grid(2, 16.0, 256), pre_zooms=6)}


@pytest.fixture(scope="module")
def fast_profiles():
    # pre_zooms=25 starts the run at effectively t = 0 on a tiny box
    g = Grid(2, 8.0, 128)
    return {M: barenblatt_profile(FAST2, M, g, pre_zooms=25, dt_growth=0.01, strict=False)
            for M in (1.0, 2.0)}


@pytest.fixture(scope="module")
def marc_profiles():
    g = Grid(1, 250.0, 16384)
    return {M: marcinkiewicz_profile(MARC, 2.0, M, g, caps=(1e4, 1e5), strict=False)
            for M in (1.0, 2.0)}


# ---------------------------------------------------------------------------
# 1. kappa identity
# ---------------------------------------------------------------------------

KAPPA_CASES = [(1, 0.5, 4096, a) for a in (0.125, 0.25, 0.375)] \
    + [(2, 1.0, 256, a) for a in (0.25, 0.5, 0.75)] \
    + [(3, 0.5, 128, a) for a in (0.625, 1.25, 1.875)]


def test_criterion_1_kappa_identity():
    errs = [power_law_identity_error(Grid(N, 1.0, n), s, a)["max_rel_error"]
            for N, s, n, a in KAPPA_CASES]
    sym = max(abs(kappa(a, N, s) - kappa(N - s - a, N, s)) / abs(kappa(a, N, s))
              for N, s, _, a in KAPPA_CASES)
    # the classical limit needs 0 < alpha < N - 2
    lim = max(abs(kappa(a, N, 2.0 - 1e-6) / (a * (N - a - 2)) - 1.0) for N, a in
              [(3, 0.5), (4, 1.0), (5, 1.0), (5, 2.5), (6, 1.5)])
    ok = max(errs) <= 0.01 and sym <= 1e-12 and lim <= 1e-4
    record(1, "kappa identity", ok,
           f"max annulus error {_fmt(max(errs))} over 9 triples (<=1e-2), "
           f"symmetry {_fmt(sym)} (<=1e-12), sigma->2 {_fmt(lim)} (<=1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 2. exact linear solution
# ---------------------------------------------------------------------------

def test_criterion_2_poisson_solution():
    g = Grid(1, 40.0, 1024)
    x = g.axis
    # the exact solution on the torus is the periodized Poisson kernel
    u0 = Field(g, periodic_poisson_kernel_1d(x, 1.0, g.L))
    tr = evolve(u0, Nonlinearity.power(1.0), LIN[1], SolverConfig(1e-3, 1.0, snapshot_times=(1.0,)))
    exact = periodic_poisson_kernel_1d(x, 2.0, g.L)
    err = float(np.abs(tr.at(1.0).field.values - exact).max() / exact.max())
    ok = err <= 1e-3
    record(2, "exact linear solution", ok, f"L^inf relative error {_fmt(err)} (<=1e-3)")
    assert ok


# ---------------------------------------------------------------------------
# 3. best constant
# ---------------------------------------------------------------------------

def test_criterion_3_best_constant(linear_profiles):
    rel = {N: linear_profiles[N].F0 / best_constant_linear(N) - 1.0 for N in (1, 2)}
    F0 = best_constant_linear(1)
    results = run_suite(smoothing_suite(LIN[1], F0, Grid(1, 40.0, 1024), seed=0, count=10))
    worst = max(r.worst_margin for _, r in results)
    dirac = dict(results)["dirac"].worst_margin
    ok = all(abs(v) <= 0.01 for v in rel.values()) and worst <= 1.02 and dirac >= 0.98
    record(3, "best constant", ok,
           f"F0 error N=1 {rel[1]:+.2%}, N=2 {rel[2]:+.2%} (1%); smoothing ratio max "
           f"{worst:.4f} over {len(results)} data (<=1.02), Dirac run {dirac:.4f} (>=0.98)")
    assert ok


# ---------------------------------------------------------------------------
# 4. self-similar collapse, scaling laws and tails
# ---------------------------------------------------------------------------

def _scaled_deviation(p1, p2, amp, arg):
    """max |F_2(xi) - amp F_1(arg xi)| / F_2(0) over the window both profiles trust."""
    xi = p2.xi[(p2.xi <= p2.xi_max) & (arg * p2.xi <= p1.xi_max)]
    pred = amp * p1(arg * xi)
    return float(np.max(np.abs(np.concatenate([[p2.F0 - amp * p1.F0], p2(xi) - pred]))) / p2.F0)


def test_criterion_4_self_similar(fast_profiles, marc_profiles):
    b1, b2 = fast_profiles[1.0], fast_profiles[2.0]
    m1, m2 = marc_profiles[1.0], marc_profiles[2.0]
    a, s = mass_scaling(FAST2, 2.0)
    dev_mass = _scaled_deviation(b1, b2, a, s)
    mu, lam = marcinkiewicz_rescaling(MARC, 2.0, 2.0)
    dev_mu = _scaled_deviation(m1, m2, lam ** mu, lam)
    gamma_b = tail_exponent(FAST2)
    tail_b = b1.tail.exponent / gamma_b - 1.0
    tail_m = m1.tail.exponent / 0.5 - 1.0
    checks = {
        "Barenblatt collapse": (b1.collapse, b1.collapse <= 0.02),
        "Marcinkiewicz collapse": (m1.collapse, m1.collapse <= 0.02),
        "mass scaling": (dev_mass, dev_mass <= 0.02),
        "mu/lambda rescaling": (dev_mu, dev_mu <= 0.02),
        f"Barenblatt tail vs {gamma_b:g}": (tail_b, abs(tail_b) <= 0.05),
        "Marcinkiewicz tail vs 0.5": (tail_m, abs(tail_m) <= 0.05),
    }
    ok = all(v[1] for v in checks.values())
    record(4, "self-similar collapse", ok,
           "; ".join(f"{k} {v[0]:+.3g} {'ok' if v[1] else 'FAIL'}" for k, v in checks.items()))
    assert ok, {k: v for k, v in checks.items() if not v[1]}


# ---------------------------------------------------------------------------
# 5. elliptic residual
# ---------------------------------------------------------------------------

def test_criterion_5_elliptic_residual(linear_profiles, fast_profiles, marc_profiles):
    poisson = elliptic_residual(poisson_profile(1), grid=Grid(1, 40.0, 1024))
    computed = {"linear N=1": elliptic_residual(linear_profiles[1]),
                "fast N=2 m=0.6": elliptic_residual(fast_profiles[1.0]),
                "Marcinkiewicz N=1": elliptic_residual(marc_profiles[1.0])}
    ok = poisson <= 1e-2 and all(v <= 5e-2 for v in computed.values())
    record(5, "elliptic residual", ok,
           f"Poisson {_fmt(poisson)} (<=1e-2); " +
           ", ".join(f"{k} {_fmt(v)}" for k, v in computed.items()) + " (<=5e-2)")
    assert ok


# ---------------------------------------------------------------------------
# 6. concentration comparison
# ---------------------------------------------------------------------------

def test_criterion_6_concentration():
    checks = concentration_suite(ProblemParams(1, 1.0, 0.5), Grid(1, 4.0, 256), seed=7, count=20)
    results = run_suite(checks)
    failed = [lab for lab, r in results if not r.passed]
    worst = max(r.worst_margin for _, r in results)
    ok = not failed and len(results) == 60
    record(6, "concentration comparison", ok,
           f"{len(results) - len(failed)}/{len(results)} checks pass "
           f"(2 concave A and the diffusivity variant, 20 pairs, 5 times), worst margin {worst:.8f}")
    assert ok, failed


# ---------------------------------------------------------------------------
# 7. extinction
# ---------------------------------------------------------------------------

def test_criterion_7_extinction():
    u0, ext, gauge = explicit_extinction_setup(EXT, 64)
    cfg = SolverConfig(1e-2, 2.2, snapshot_times=(0.1, 0.25, 0.5, 0.75, 0.9), lp_orders=())
    rep = check_extinction_bound(u0, EXT, cfg, exterior=ext, gauge=gauge)
    T = rep.notes["detected"]
    bound = math.pi * gauge ** 0.5
    res = explicit_extinction_solution(EXT, 1.0).residual(Grid(3, 1.0, 64), 0.5)["max_rel"]
    ok = T is not None and abs(T - 1.0) <= 0.05 and T <= 1.05 * bound and res <= 0.02
    record(7, "extinction", ok,
           f"T = {T:.4f} (1 +- 0.05), pi M^(1/2) = {bound:.4f}, PDE residual {_fmt(res)} (<=2e-2); "
           f"rearranged comparison margin {rep.notes['comparison_margin']:.4f} (reported only)")
    assert ok


# ---------------------------------------------------------------------------
# 8. rearrangement properties
# ---------------------------------------------------------------------------

def test_criterion_8_rearrangement():
    rng = np.random.default_rng(2)
    exact = True
    for N, n in [(1, 512), (2, 48), (3, 16)]:
        g = Grid(N, 1.0, n)
        f = Field(g, rng.exponential(size=g.shape) * (rng.random(g.shape) < 0.6))
        prof, fs = decreasing_rearrangement(f), spherical_rearrangement(f)
        for k in np.quantile(f.values, np.linspace(0, 1, 21)):
            exact &= distribution_function(f, k) == profile_distribution(prof, k)
            exact &= distribution_function(fs, k) == distribution_function(f, k)
        for p in (1.0, 2.0, 3.0, math.inf):
            exact &= math.isclose(prof.norm(p), f.norm(p), rel_tol=1e-13)
            exact &= math.isclose(fs.norm(p), f.norm(p), rel_tol=1e-13)
    agree = 0
    for _ in range(200):
        n = int(rng.integers(5, 40))
        a = np.sort(rng.exponential(size=n))[::-1]
        b = np.sort(rng.exponential(size=n))[::-1]
        if rng.random() < 0.5:
            b = np.sort(a + rng.exponential(0.3, size=n) * (rng.random(n) < 0.3))[::-1]
        f, g = RadialProfile(1.0, a), RadialProfile(1.0, b)
        levels = np.unique(np.concatenate([np.linspace(0.0, max(a[0], b[0]), 64), a, b]))
        agree += concentration_compare(f, g, 1e-12 * a.sum()).holds() == convex_test_compare(f, g, levels)
    gauge_err = max(abs(marcinkiewicz_gauge(sampled_power_law(Grid(N, 1.0, n), N / p), p) - 1.0)
                    for N, n in [(1, 4096), (2, 256), (3, 64)] for p in (1.5, 2.0, 4.0))
    ok = exact and agree == 200 and gauge_err <= 1e-12
    record(8, "rearrangement properties", ok,
           f"equimeasurability and L^p norms exact: {bool(exact)}; ordering equivalence "
           f"{agree}/200; gauge of |x|^(-N/p) off by {_fmt(gauge_err)}")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

CONFIG = """[problem]
N = 1
sigma = 1.0
m = 0.5
[grid]
n = 128
L = 8.0
[solver]
dt_initial = 0.01
t_end = 0.5
snapshots = 0.1 0.5
[datum]
kind = random
"""


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(CONFIG)
    runs = [["simulate", "--config", str(cfg), "--seed", "3"],
            ["verify", "concentration", "--config", str(cfg), "--seed", "3", "--count", "2"]]
    same = []
    for k, argv in enumerate(runs):
        trees = []
        for rep in ("a", "b"):
            out = tmp_path / f"{k}{rep}"
            assert main(argv + ["--out", str(out)]) == EXIT_OK
            trees.append(_tree(out))
        same.append(trees[0] == trees[1] and len(trees[0]) > 1)
    seed = json.loads(trees[0]["manifest.json"])["seed"]
    ok = all(same) and seed == 3
    record(9, "determinism", ok, f"byte-identical output trees for simulate: {same[0]}, "
                                 f"verify concentration: {same[1]}")
    assert ok
