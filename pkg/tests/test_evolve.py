import json
import math

import numpy as np
import pytest

from fracfd.exponents import (DomainError, Nonlinearity, ProblemParams, exponent_set,
                              periodic_poisson_kernel_1d, poisson_kernel)
from fracfd.evolve import (Exterior, Scheme, SolverConfig, detect_extinction,
                           detect_extinction_series, evolve, trajectory_from_series, zoom_out)
from fracfd.rearrange import Field, Grid

SQRT = Nonlinearity.power(0.5)
P1D = ProblemParams(1, 1.0, 0.5)


def bump(grid, c=0.0, w=1.0, amp=1.0):
    x = grid.coords()
    r2 = sum((xi - c) ** 2 for xi in x) if grid.N > 1 else (x[0] - c) ** 2
    return Field(grid, amp * np.exp(-0.5 * r2 / w ** 2))


def test_periodic_poisson_kernel_is_the_image_sum():
    x = np.linspace(-3, 3, 7)
    brute = sum(poisson_kernel(np.abs(x + 2 * 3.0 * j), 0.7, 1) for j in range(-4000, 4001))
    assert np.allclose(periodic_poisson_kernel_1d(x, 0.7, 3.0), brute, rtol=1e-4)


def test_poisson_linear_solution():
    g = Grid(1, 40.0, 1024)
    x = g.axis
    u0 = Field(g, periodic_poisson_kernel_1d(x, 1.0, g.L))
    tr = evolve(u0, Nonlinearity.power(1.0), ProblemParams(1, 1.0, 1.0),
                SolverConfig(1e-3, 1.0, snapshot_times=(0.5, 1.0)))
    exact = periodic_poisson_kernel_1d(x, 2.0, g.L)
    err = np.abs(tr.at(1.0).field.values - exact).max() / exact.max()
    assert err <= 1e-3


def test_zero_datum_stays_zero():
    g = Grid(2, 2.0, 16)
    tr = evolve(Field(g, np.zeros(g.shape)), SQRT, ProblemParams(2, 1.0, 0.6),
                SolverConfig(0.1, 1.0, snapshot_times=(0.5, 1.0)))
    assert all(np.all(s.field.values == 0) for s in tr.snapshots)
    assert tr.extinction_time is None


def _run_1d(dt, n=256, t_end=0.5):
    g = Grid(1, 8.0, n)
    return evolve(bump(g), SQRT, P1D, SolverConfig(dt, t_end, snapshot_times=(t_end,))).final.field.values


def test_first_order_in_time():
    u1, u2, u4 = (_run_1d(dt) for dt in (0.02, 0.01, 0.005))
    d1, d2 = np.abs(u1 - u2).max(), np.abs(u2 - u4).max()
    rate = math.log2(d1 / d2)
    assert 0.8 < rate < 1.3
    # Richardson: error of the dt run is about twice the dt/2 difference
    C = 2 * d2 / 0.005
    assert np.abs(u2 - (2 * u4 - u2)).max() <= 1.5 * C * 0.01


def test_mass_conservation_fast_diffusion():
    g = Grid(1, 16.0, 512)
    u0 = bump(g)
    tr = evolve(u0, SQRT, P1D, SolverConfig(0.01, 2.0, snapshot_times=(0.5, 1.0, 2.0)))
    m0 = u0.values.sum() * g.cell_measure
    for s in tr.snapshots:
        assert abs(s.diagnostics["mass"] - m0) / m0 <= 1e-6 * max(s.t, 1.0)
        assert s.diagnostics["clipped_mass"] >= 0
        assert np.all(s.field.values >= 0)
    assert np.all(np.diff(tr.times) > 0)


def test_lp_norms_non_increasing():
    g = Grid(2, 4.0, 32)
    cfg = SolverConfig(0.02, 1.0, snapshot_times=(0.0, 0.1, 0.2, 0.4, 0.8, 1.0), lp_orders=(1.5, 2.0, 4.0))
    tr = evolve(bump(g, w=0.6), Nonlinearity.power(0.8), ProblemParams(2, 1.0, 0.8), cfg)
    for key in ("L1.5", "L2", "L4", "sup"):
        seq = [s.diagnostics[key] for s in tr.snapshots]
        assert np.all(np.diff(seq) <= 1e-10 * seq[0]), key


def test_comparison_principle():
    g = Grid(1, 8.0, 256)
    u0 = bump(g, c=-1.0, amp=0.5)
    v0 = Field(g, u0.values + bump(g, c=1.0, w=0.5).values)
    cfg = SolverConfig(0.01, 1.0, snapshot_times=(0.25, 0.5, 1.0))
    tu, tv = evolve(u0, SQRT, P1D, cfg), evolve(v0, SQRT, P1D, cfg)
    for a, b in zip(tu.snapshots, tv.snapshots):
        assert np.all(a.field.values <= b.field.values + 1e-8)


def test_scaling_covariance():
    # C^{alpha_p} u0(C^{beta_p} x) evolves into C^{alpha_p} u(C^{beta_p} x, C t)
    p = 2.0
    ex = exponent_set(P1D, p)
    C = 2.0 ** (1.0 / ex.beta_p)
    g = Grid(1, 8.0, 256)
    gs = Grid(1, 8.0 / 2.0, 256)
    u0 = bump(g)
    t, dt = 0.4, 0.01
    tu = evolve(u0, SQRT, P1D, SolverConfig(dt * C, t * C, epsilon_reg=0.0))
    tv = evolve(Field(gs, C ** ex.alpha_p * u0.values), SQRT, P1D, SolverConfig(dt, t, epsilon_reg=0.0))
    ref = C ** ex.alpha_p * tu.final.field.values
    assert np.abs(tv.final.field.values - ref).max() <= 2e-8 * ref.max()


def test_explicit_oracle_agrees():
    g = Grid(1, 8.0, 128)
    u0 = bump(g)
    cfg_i = SolverConfig(2e-3, 0.2, epsilon_reg=1e-6)
    cfg_e = SolverConfig(2e-3, 0.2, epsilon_reg=1e-6, scheme=Scheme.EXPLICIT_ORACLE)
    ui = evolve(u0, SQRT, P1D, cfg_i).final.field.values
    ue = evolve(u0, SQRT, P1D, cfg_e).final.field.values
    assert np.abs(ui - ue).max() <= 0.01 * ue.max()


def test_regularization_sensitivity_is_small():
    a = _run_1d(0.01)
    g = Grid(1, 8.0, 256)
    b = evolve(bump(g), SQRT, P1D, SolverConfig(0.01, 0.5, epsilon_reg=1e-6)).final.field.values
    assert np.abs(a - b).max() <= 1e-3 * a.max()


def test_exterior_cells_hold_prescribed_values():
    g = Grid(1, 4.0, 64)
    act = np.abs(g.axis) < 2.0
    ext = Exterior(act, lambda t: np.full(g.shape, 0.1))
    tr = evolve(bump(g, w=0.5), SQRT, P1D, SolverConfig(0.05, 0.5), exterior=ext)
    assert np.all(tr.final.field.values[~act] == 0)
    assert np.all(tr.final.field.values >= 0)


def test_errors():
    g = Grid(1, 4.0, 32)
    with pytest.raises(DomainError):
        evolve(Field(g, -np.ones(g.shape)), SQRT, P1D, SolverConfig(0.1, 1.0))
    with pytest.raises(DomainError):
        SolverConfig(0.1, 1.0, snapshot_times=(0.5, 0.2))
    with pytest.raises(DomainError):
        SolverConfig(0.1, 1.0, snapshot_times=(2.0,))
    with pytest.raises(DomainError):
        SolverConfig(0.1, 1.0, newton_tol=0.0)
    with pytest.raises(DomainError):
        SolverConfig(0.0, 1.0)


def test_detect_extinction_examples():
    tr = trajectory_from_series([0, 1, 2], [1.0, 0.5, 0.0])
    assert detect_extinction(tr, 1e-8) == pytest.approx(2.0, abs=1e-6)
    assert detect_extinction(trajectory_from_series([0, 1, 2], [1.0, 0.5, 0.2]), 1e-8) is None
    assert detect_extinction_series([0, 1], [1.0, 0.0], 0.5) == pytest.approx(0.5)


def test_export_manifest(tmp_path):
    g = Grid(1, 4.0, 32)
    tr = evolve(bump(g), SQRT, P1D, SolverConfig(0.1, 0.3, snapshot_times=(0.1, 0.3)))
    d = tr.export(tmp_path / "traj")
    man = json.loads((d / "manifest.json").read_text())
    assert [e["t"] for e in man["snapshots"]] == pytest.approx([0.1, 0.3])
    assert man["metadata"]["config"]["scheme"] == "SemiImplicit"
    assert (d / "snapshot_0001.bin").exists()


def test_zoom_out_conserves_mass():
    g = Grid(2, 2.0, 32)
    f = bump(g, w=0.4)
    z = zoom_out(f)
    assert z.grid.L == 4.0
    assert z.values.sum() * z.grid.cell_measure == pytest.approx(f.values.sum() * g.cell_measure, rel=1e-13)
    with pytest.raises(DomainError):
        zoom_out(Field(Grid(1, 1.0, 6), np.ones(6)))
