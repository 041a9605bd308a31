import json
import math

import numpy as np
import pytest

from fracfd.exponents import DomainError, ProblemParams, best_constant_linear, mass_scaling, poisson_kernel
from fracfd.rearrange import Grid
from fracfd.selfsim import (InsufficientSamplesError, SelfSimilarProfile, barenblatt_profile,
                            collapse_metric, dirac_datum, elliptic_residual,
                            explicit_extinction_solution, marcinkiewicz_profile, poisson_profile,
                            shell_average, tail_exponent_fit, truncated_power_datum)

LIN1 = ProblemParams(1, 1.0, 1.0)


def test_tail_fit_exact_power():
    xi = np.geomspace(0.1, 100, 400)
    fit = tail_exponent_fit(xi, 3.0 * xi ** -2.0)
    assert fit.exponent == pytest.approx(2.0, abs=1e-6)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-6)
    assert fit.window == (25.0, 50.0)


def test_tail_fit_noisy_interval_covers_truth():
    rng = np.random.default_rng(3)
    xi = np.geomspace(1, 64, 512)
    hits = 0
    for _ in range(40):
        F = xi ** -1.5 * (1 + 0.01 * rng.standard_normal(xi.size))
        lo, hi = tail_exponent_fit(xi, F).ci
        hits += lo <= 1.5 <= hi
    assert hits >= 34


def test_tail_fit_needs_samples():
    xi = np.geomspace(1, 64, 20)
    with pytest.raises(InsufficientSamplesError):
        tail_exponent_fit(xi, xi ** -2.0)


def test_poisson_profile_tail_and_residual():
    pp = poisson_profile(1)
    assert pp.tail.exponent == pytest.approx(2.0, rel=0.05)
    assert elliptic_residual(pp, grid=Grid(1, 40.0, 1024)) <= 1e-2


def test_residual_detects_wrong_normalization():
    pp = poisson_profile(1)
    g = Grid(1, 40.0, 1024)
    base = elliptic_residual(pp, grid=g)
    scaled = SelfSimilarProfile("Barenblatt", ProblemParams(1, 1.0, 0.5), 1.0, pp.xi, 2 * pp.F,
                                2 * pp.F0, 1.0, 1.0, pp.xi_max, pp.h_xi)
    assert elliptic_residual(scaled, grid=g) > 10 * base


def test_profile_invariants_enforced():
    xi = np.linspace(0.1, 1, 10)
    with pytest.raises(DomainError):
        SelfSimilarProfile("Barenblatt", LIN1, 1.0, xi, xi.copy(), 1.0, 1.0, 1.0, 1.0, 0.1)


def test_collapse_metric():
    a = np.array([1.0, 0.5, 0.2])
    assert collapse_metric([a, a]) == 0
    assert collapse_metric([a, 1.01 * a]) == pytest.approx(0.01)


def test_dirac_datum_mass():
    g = Grid(2, 1.0, 64)
    d = dirac_datum(g, 2.5)
    assert d.integral() == pytest.approx(2.5, rel=1e-13)
    assert np.count_nonzero(d.values) == np.count_nonzero(g.radius() <= 4 * g.h + 1e-12)


def test_shell_average_of_radial_function():
    g = Grid(2, 4.0, 64)
    f = poisson_profile(2, xi_max=10.0).field(g)
    r, v = shell_average(f)
    assert r[0] == 0 and v[0] == f.values[g.origin_index]
    assert np.all(np.diff(r) > 0)


@pytest.fixture(scope="module")
def linear_profile():
    return barenblatt_profile(LIN1, 1.0, Grid(1, 40.0, 1024), pre_zooms=6)


def test_linear_barenblatt_matches_poisson(linear_profile):
    pr = linear_profile
    assert pr.F0 == pytest.approx(1 / math.pi, rel=0.01)
    xi = pr.xi[pr.xi <= 10]
    assert np.max(np.abs(pr(xi) / poisson_kernel(xi, 1.0, 1) - 1)) <= 0.02
    assert pr.collapse <= 0.02
    assert pr.tail.exponent == pytest.approx(2.0, rel=0.05)
    assert elliptic_residual(pr) <= 5e-2


def test_profile_export(linear_profile, tmp_path):
    linear_profile.export(tmp_path / "p.csv")
    head = (tmp_path / "p.csv").read_text().splitlines()[:2]
    assert head[0] == "xi,F"
    meta = json.loads((tmp_path / "p.json").read_text())
    assert meta["F0"] == pytest.approx(linear_profile.F0)
    assert meta["tail_fit"]["exponent"] == pytest.approx(linear_profile.tail.exponent)


def test_mass_scaling_1d_fast_diffusion():
    prm = ProblemParams(1, 1.0, 0.8)
    g = Grid(1, 40.0, 1024)
    p1 = barenblatt_profile(prm, 1.0, g, pre_zooms=6)
    p2 = barenblatt_profile(prm, 2.0, g, pre_zooms=6)
    a, b = mass_scaling(prm, 2.0)
    xi = p2.xi[p2.xi <= p2.xi_max / 2]
    assert np.max(np.abs(p2(xi) - a * p1(b * xi))) / p2.F0 <= 0.02


def test_barenblatt_gates():
    with pytest.raises(DomainError):
        barenblatt_profile(ProblemParams(2, 1.0, 0.5), 1.0, Grid(2, 1.0, 16))
    with pytest.raises(DomainError):
        barenblatt_profile(LIN1, -1.0, Grid(1, 1.0, 16))


def test_marcinkiewicz_gates():
    g = Grid(1, 10.0, 64)
    with pytest.raises(DomainError):
        marcinkiewicz_profile(LIN1, 2.0, 1.0, g)
    with pytest.raises(DomainError):
        marcinkiewicz_profile(ProblemParams(1, 1.0, 0.5), 1.0, 1.0, g)
    with pytest.raises(DomainError):
        marcinkiewicz_profile(ProblemParams(1, 0.5, 0.5), 0.9, 1.0, g)


def test_truncated_datum_cell_averages():
    g = Grid(1, 4.0, 64)
    u = truncated_power_datum(g, 2.0, 1.0, cap=1e12)
    # the cell averages integrate |x|^{-1/2} exactly over [-L - h/2, L - h/2]
    a, b = -g.L - 0.5 * g.h, g.L - 0.5 * g.h
    exact = 2 * math.sqrt(-a) + 2 * math.sqrt(b)
    assert u.integral() == pytest.approx(exact, rel=1e-9)
    assert np.all(u.values <= 1e12)
    g2 = Grid(2, 1.0, 32)
    u2 = truncated_power_datum(g2, 4.0, 1.0, cap=1e6)
    pt = truncated_power_datum(g2, 4.0, 1.0, cap=1e6, averaged=False)
    far = g2.radius() > 6 * g2.h
    assert np.allclose(u2.values[far], pt.values[far])


def test_explicit_extinction_solution_values():
    U = explicit_extinction_solution(ProblemParams(3, 1.0, 0.5), 1.0)
    r = np.array([0.5, 1.0, 2.0])
    assert np.allclose(U(r, 0.0), r ** -2.0 / math.pi ** 2, rtol=1e-13)
    assert np.all(U(r, 1.0) == 0.0)
    assert U(r, 0.75)[1] == pytest.approx(0.25 ** 2 / math.pi ** 2)
    with pytest.raises(DomainError):
        explicit_extinction_solution(ProblemParams(3, 1.0, 0.7), 1.0)
    with pytest.raises(DomainError):
        explicit_extinction_solution(ProblemParams(3, 1.0, 0.5), 0.0)


def test_explicit_extinction_residual_small_grid():
    U = explicit_extinction_solution(ProblemParams(3, 1.0, 0.5), 1.0)
    res = U.residual(Grid(3, 1.0, 64), 0.5)
    assert res["max_rel"] <= 0.02
    assert res["kappa"] == pytest.approx(2 / math.pi)
