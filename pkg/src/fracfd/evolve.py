"""Time integration of u_t + (-Delta)^{sigma/2} A(u) = f on a periodic grid.

The default scheme is backward Euler.  Each step is solved for w = A(u)
by Newton's method: the step equation B(w) + dt L w = b (B = A^{-1}) is
the gradient of a convex functional, so Newton with a line search on
that functional converges from any start.  Linear systems go through
conjugate gradients preconditioned with (c + dt |k|^sigma)^{-1}.

An optional active-cell mask with prescribed exterior values lets a
periodic box stand in for a bounded piece of R^N whose complement is
known, e.g. an explicit solution.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .exponents import DomainError, Nonlinearity, ProblemParams, signed_power
from .fraclap import SpectralOperator
from .rearrange import Field, Gauge, Grid, marcinkiewicz_gauge, write_field


class Scheme(enum.Enum):
    SEMI_IMPLICIT = "SemiImplicit"
    EXPLICIT_ORACLE = "ExplicitOracle"


class SolverError(RuntimeError):
    """Inner solver divergence or step-size underflow."""

    def __init__(self, msg: str, t: float | None = None, dt: float | None = None):
        super().__init__(msg)
        self.t, self.dt = t, dt


@dataclass
class SolverConfig:
    dt_initial: float
    t_end: float
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    # None means 1e-8 * ||u0||_inf; 0 switches regularization off
    epsilon_reg: Optional[float] = None
    newton_tol: float = 1e-10
    max_inner_iters: int = 40
    snapshot_times: Sequence[float] = ()
    t_start: float = 0.0
    # dt = max(dt_initial, dt_growth * t), capped by dt_max
    dt_growth: float = 0.0
    dt_max: float = math.inf
    lp_orders: Sequence[float] = (2.0,)
    gauge_p: Optional[float] = None
    # relative to ||u0||_inf
    extinction_threshold: float = 1e-6
    stop_at_extinction: bool = True
    max_halvings: int = 20
    cfl: float = 0.4
    cg_maxiter: int = 400

    def __post_init__(self):
        if not self.dt_initial > 0 or not self.t_end > self.t_start:
            raise DomainError("need dt_initial > 0 and t_end > t_start")
        if not self.newton_tol > 0:
            raise DomainError("newton_tol must be positive")
        snaps = [float(s) for s in self.snapshot_times]
        if snaps != sorted(snaps) or any(s < self.t_start or s > self.t_end for s in snaps):
            raise DomainError("snapshot_times must be sorted and inside [t_start, t_end]")
        self.snapshot_times = tuple(snaps)
        if isinstance(self.scheme, str):
            self.scheme = Scheme(self.scheme)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        d["snapshot_times"] = list(self.snapshot_times)
        d["lp_orders"] = list(self.lp_orders)
        d["dt_max"] = None if math.isinf(self.dt_max) else self.dt_max
        return d


@dataclass
class Exterior:
    """Cells outside `active` are not evolved; they hold values(t) (zero if None)."""

    active: np.ndarray
    values: Optional[Callable[[float], np.ndarray]] = None

    def at(self, t: float, shape) -> np.ndarray:
        if self.values is None:
            return np.zeros(shape)
        return np.where(self.active, 0.0, np.asarray(self.values(t), dtype=float))


@dataclass
class Snapshot:
    t: float
    field: Field
    diagnostics: dict


@dataclass
class Trajectory:
    snapshots: list
    final: Snapshot
    history: dict
    extinction_time: Optional[float]
    metadata: dict
    initial: Optional[Snapshot] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def at(self, t: float) -> Snapshot:
        for s in self.snapshots:
            if math.isclose(s.t, t, rel_tol=1e-12, abs_tol=1e-12):
                return s
        raise KeyError(t)

    def export(self, directory) -> Path:
        """Field binaries plus manifest.json."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, s in enumerate(self.snapshots):
            name = f"snapshot_{i:04d}.bin"
            write_field(d / name, s.field)
            entries.append({"file": name, "t": s.t, "diagnostics": s.diagnostics})
        write_field(d / "final.bin", self.final.field)
        manifest = {
            "snapshots": entries,
            "final": {"file": "final.bin", "t": self.final.t, "diagnostics": self.final.diagnostics},
            "extinction_time": self.extinction_time,
            "metadata": self.metadata,
        }
        (d / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, enum.Enum):
        return x.value
    return x


# ---------------------------------------------------------------------------
# regularized nonlinearity
# ---------------------------------------------------------------------------

class _Regularized:
    """A_eps(u) = sign(u) (A(|u| + eps) - A(eps)), with inverse and derivatives.

    Shifting keeps A_eps concave when A is, and gives A_eps'(0) = A'(eps)
    finite.  eps = 0 returns A itself (odd extension).
    """

    def __init__(self, A: Nonlinearity, eps: float):
        self.A, self.eps = A, float(eps)
        self.A_eps = float(A(np.array([eps]))[0]) if eps > 0 else 0.0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.eps == 0:
            return self.A(u)
        return np.sign(u) * (self.A(np.abs(u) + self.eps) - self.A_eps)

    def deriv(self, u):
        return self.A.dA(np.abs(np.asarray(u, dtype=float)) + self.eps)

    def inv(self, w):
        w = np.asarray(w, dtype=float)
        if self.eps == 0:
            return self.A.inverse(w)
        return np.sign(w) * np.maximum(self.A.inverse(np.abs(w) + self.A_eps) - self.eps, 0.0)

    def inv_deriv(self, w):
        w = np.asarray(w, dtype=float)
        if self.eps == 0:
            return self.A.inverse_derivative(w)
        return self.A.inverse_derivative(np.abs(w) + self.A_eps)


def _diagnostics(u: np.ndarray, grid: Grid, cfg: SolverConfig, clipped: float) -> dict:
    cm = grid.cell_measure
    d = {"mass": float(u.sum() * cm), "sup": float(np.abs(u).max()),
         "clipped_mass": float(clipped)}
    for p in cfg.lp_orders:
        d[f"L{p:g}"] = float((np.sum(np.abs(u) ** p) * cm) ** (1.0 / p))
    if cfg.gauge_p is not None:
        d["gauge"] = marcinkiewicz_gauge(Field(grid, u), cfg.gauge_p, Gauge.COEFFICIENT)
    return d


class _Stepper:
    def __init__(self, grid, params, A, cfg, eps, exterior):
        self.grid, self.cfg = grid, cfg
        self.op = SpectralOperator(grid, params.sigma)
        self.Areg = _Regularized(A, eps)
        self.A = A
        self.exterior = exterior
        self.active = None if exterior is None else np.asarray(exterior.active, dtype=bool)
        self.linear = (A.kind == "power" and A.m == 1.0 and self.active is None)
        self.newton_iters = 0
        self.cg_iters = 0

    def _L(self, w):
        if self.active is None:
            return self.op.apply_array(w)
        return self.op.apply_array(np.where(self.active, w, 0.0)) * self.active

    def _ext_term(self, t):
        # L applied to the exterior part of A(u), restricted to active cells
        if self.active is None or self.exterior.values is None:
            return 0.0
        g = self.exterior.at(t, self.grid.shape)
        return self.op.apply_array(self.A(g)) * self.active

    def implicit(self, u, t, dt, rhs_extra):
        """One backward Euler step from u at time t to t + dt."""
        b = u + rhs_extra
        ext = self._ext_term(t + dt)
        if not np.isscalar(ext):
            b = b - dt * ext
        if self.linear:
            c = self.A.coef
            return self.op.solve_shifted(b, 1.0, dt * c), 1
        cfg, sh, n = self.cfg, self.grid.shape, self.grid.size
        act = self.active
        w = self.Areg(u) if act is None else np.where(act, self.Areg(u), 0.0)
        Lw = self._L(w)

        def residual(w, Lw):
            R = self.Areg.inv(w) + dt * Lw - b
            return R if act is None else np.where(act, R, 0.0)

        R = residual(w, Lw)
        scale = max(np.linalg.norm(b), np.linalg.norm(u), 1e-300)
        nr = np.linalg.norm(R)
        for it in range(cfg.max_inner_iters + 1):
            if nr <= cfg.newton_tol * scale:
                return self.Areg.inv(w), it
            if it == cfg.max_inner_iters:
                break
            d = self.Areg.inv_deriv(w)
            if act is not None:
                d = np.where(act, d, 1.0)
            cbar = float(np.mean(d if act is None else d[act]))
            if not np.isfinite(cbar) or cbar <= 0:
                cbar = 1.0

            def mv(v, d=d):
                v = v.reshape(sh)
                return (d * v + dt * self._L(v)).ravel()

            def pc(v, c=cbar):
                v = v.reshape(sh)
                if act is None:
                    return self.op.solve_shifted(v, c, dt).ravel()
                z = self.op.solve_shifted(np.where(act, v, 0.0), c, dt)
                return np.where(act, z, v).ravel()

            Aop = LinearOperator((n, n), matvec=mv, dtype=float)
            Mop = LinearOperator((n, n), matvec=pc, dtype=float)
            count = [0]
            rtol = max(1e-13, min(1e-2, 0.1 * nr / scale))
            dw, info = cg(Aop, -R.ravel(), M=Mop, rtol=rtol, maxiter=cfg.cg_maxiter,
                          callback=lambda _x: count.__setitem__(0, count[0] + 1))
            self.cg_iters += count[0]
            self.newton_iters += 1
            dw = dw.reshape(sh)
            if act is not None:
                dw = np.where(act, dw, 0.0)
            Ldw = self._L(dw)
            lam = 1.0
            w1, Lw1 = w + dw, Lw + Ldw
            R1 = residual(w1, Lw1)
            n1 = np.linalg.norm(R1)
            if not n1 < nr:
                # exact line search on the convex functional: its slope along
                # dw is <R(w + lam dw), dw>, increasing in lam
                lo, hi = 0.0, 1.0
                for _ in range(40):
                    lam = 0.5 * (lo + hi)
                    Rl = residual(w + lam * dw, Lw + lam * Ldw)
                    if np.sum(Rl * dw) > 0:
                        hi = lam
                    else:
                        lo = lam
                lam = max(lo, 1e-12)
                w1, Lw1 = w + lam * dw, Lw + lam * Ldw
                R1 = residual(w1, Lw1)
                n1 = np.linalg.norm(R1)
            w, Lw, R, nr = w1, Lw1, R1, n1
        raise SolverError(f"Newton did not converge (residual {nr / scale:.2e})", t=t, dt=dt)

    def explicit(self, u, t, dt, source):
        """Forward Euler with CFL substeps over [t, t + dt]."""
        cfg = self.cfg
        mmax = self.op.max_multiplier()
        tt, v, nsub = t, u.copy(), 0
        while tt < t + dt - 1e-15 * max(1.0, abs(t)):
            lip = float(np.max(self.Areg.deriv(v))) * mmax
            if not np.isfinite(lip):
                raise SolverError("explicit oracle needs a finite A' (set epsilon_reg > 0)", t=tt)
            sub = min(cfg.cfl / max(lip, 1e-300), t + dt - tt)
            w = self.Areg(v)
            if self.active is not None:
                w = np.where(self.active, w, 0.0)
            rate = -self._L(w)
            ext = self._ext_term(tt)
            if not np.isscalar(ext):
                rate = rate - ext
            if source is not None:
                rate = rate + source(tt)
            v = v + sub * rate
            if self.active is not None:
                v = np.where(self.active, v, 0.0)
            tt += sub
            nsub += 1
        return v, nsub


def evolve(u0: Field, A: Nonlinearity, params: ProblemParams, cfg: SolverConfig,
           source: Optional[Callable[[float], np.ndarray]] = None,
           exterior: Optional[Exterior] = None,
           callback: Optional[Callable[[float, np.ndarray], None]] = None) -> Trajectory:
    """Integrate from cfg.t_start to cfg.t_end and record snapshots.

    Negative values produced by the discrete operator are clipped to zero
    after each step; the clipped mass is accumulated in the diagnostics.
    """
    grid = u0.grid
    u = np.array(u0.values, dtype=float)
    if np.any(u < 0):
        raise DomainError("initial datum must be nonnegative")
    if source is not None and np.any(np.asarray(source(cfg.t_start)) < 0):
        raise DomainError("source must be nonnegative")
    if exterior is not None:
        u = np.where(exterior.active, u, 0.0)
    u0max = float(np.abs(u).max())
    eps = cfg.epsilon_reg if cfg.epsilon_reg is not None else 1e-8 * u0max
    st = _Stepper(grid, params, A, cfg, eps, exterior)
    thr = cfg.extinction_threshold * u0max

    t = cfg.t_start
    snaps_todo = list(cfg.snapshot_times)
    snapshots = []
    clipped = 0.0
    hist = {"t": [t], "sup": [u0max], "mass": [float(u.sum() * grid.cell_measure)]}
    steps = rejected = 0
    ext_time = None
    while snaps_todo and snaps_todo[0] <= t + 1e-14:
        snapshots.append(Snapshot(t, Field(grid, u.copy()), _diagnostics(u, grid, cfg, clipped)))
        snaps_todo.pop(0)

    initial = Snapshot(t, Field(grid, u.copy()), _diagnostics(u, grid, cfg, 0.0))
    dt_nominal = cfg.dt_initial
    while t < cfg.t_end - 1e-14 * max(1.0, cfg.t_end):
        dt = min(max(cfg.dt_initial, cfg.dt_growth * t), cfg.dt_max)
        dt_nominal = dt
        target = min(t + dt, cfg.t_end)
        if snaps_todo and snaps_todo[0] < target:
            target = snaps_todo[0]
        dt = target - t
        rhs_extra = 0.0
        for attempt in range(cfg.max_halvings + 1):
            try:
                if cfg.scheme is Scheme.EXPLICIT_ORACLE:
                    unew, _ = st.explicit(u, t, dt, source)
                else:
                    rhs_extra = dt * np.asarray(source(t + dt)) if source is not None else 0.0
                    unew, _ = st.implicit(u, t, dt, rhs_extra)
                break
            except SolverError:
                rejected += 1
                dt *= 0.5
                if attempt == cfg.max_halvings:
                    raise SolverError("step size underflow", t=t, dt=dt)
        if exterior is not None:
            unew = np.where(exterior.active, unew, 0.0)
        neg = unew < 0
        if np.any(neg):
            clipped += float(-unew[neg].sum() * grid.cell_measure)
            unew = np.where(neg, 0.0, unew)
        t_prev, sup_prev = t, hist["sup"][-1]
        u, t = unew, t + dt
        steps += 1
        sup = float(np.abs(u).max())
        hist["t"].append(t)
        hist["sup"].append(sup)
        hist["mass"].append(float(u.sum() * grid.cell_measure))
        if callback is not None:
            callback(t, u)
        while snaps_todo and snaps_todo[0] <= t + 1e-12 * max(1.0, t):
            snapshots.append(Snapshot(snaps_todo.pop(0), Field(grid, u.copy()),
                                      _diagnostics(u, grid, cfg, clipped)))
        if ext_time is None and sup < thr:
            ext_time = _crossing(t_prev, sup_prev, t, sup, thr)
            if cfg.stop_at_extinction:
                break

    final = Snapshot(t, Field(grid, u.copy()), _diagnostics(u, grid, cfg, clipped))
    meta = {
        "steps": steps, "rejected_steps": rejected, "newton_iterations": st.newton_iters,
        "cg_iterations": st.cg_iters, "epsilon_reg": eps, "clipped_mass": clipped,
        "nonlinearity": A.name, "params": params.as_dict(), "grid": grid.as_dict(),
        "config": cfg.as_dict(), "extinction_threshold_abs": thr,
        "exterior": exterior is not None, "last_dt": dt_nominal,
    }
    return Trajectory(snapshots, final, hist, ext_time, meta, initial)


def _crossing(t0, s0, t1, s1, thr):
    if s0 <= thr or s0 == s1:
        return t1
    return t0 + (s0 - thr) / (s0 - s1) * (t1 - t0)


def detect_extinction(traj: Trajectory, threshold: float, use_history: bool = True) -> Optional[float]:
    """First time the sup-norm drops below threshold, linearly interpolated.

    Uses the per-step history when present, otherwise the snapshots.
    """
    if use_history and traj.history and len(traj.history.get("t", [])) > 1:
        ts, ss = traj.history["t"], traj.history["sup"]
    else:
        ts = [s.t for s in traj.snapshots]
        ss = [s.diagnostics["sup"] for s in traj.snapshots]
    return detect_extinction_series(ts, ss, threshold)


def detect_extinction_series(times: Sequence[float], sups: Sequence[float], threshold: float):
    for i, s in enumerate(sups):
        if s < threshold:
            if i == 0:
                return float(times[0])
            return float(_crossing(times[i - 1], sups[i - 1], times[i], s, threshold))
    return None


def trajectory_from_series(times, sups, grid: Optional[Grid] = None) -> Trajectory:
    """Lightweight trajectory carrying only sup-norm diagnostics."""
    g = grid or Grid(1, 1.0, 2)
    snaps = [Snapshot(float(t), Field(g, np.zeros(g.shape)), {"sup": float(s)})
             for t, s in zip(times, sups)]
    return Trajectory(snaps, snaps[-1], {}, None, {})


# ---------------------------------------------------------------------------
# grid changes
# ---------------------------------------------------------------------------

def zoom_out(f: Field) -> Field:
    """Double the box at fixed n: 2^N block averages, zero outside the old box.

    Mass is conserved exactly.  The old box [-L, L) maps to the central
    half of the new axis.
    """
    g, n, N = f.grid, f.grid.n, f.grid.N
    if n % 4:
        raise DomainError("zoom_out needs n divisible by 4")
    out = f.values
    # even fine cells coincide with coarse cell centres (origin included)
    for ax in range(N):
        out = _restrict_axis(out, ax)
    coarse = np.zeros((n,) * N)
    sl = tuple(slice(n // 4, n // 4 + n // 2) for _ in range(N))
    coarse[sl] = out
    return Field(g.zoom_out(), coarse)


def _restrict_axis(v: np.ndarray, ax: int) -> np.ndarray:
    """Full-weighting restriction by 2 along one axis (periodic, mass preserving)."""
    full = 0.25 * np.roll(v, 1, axis=ax) + 0.5 * v + 0.25 * np.roll(v, -1, axis=ax)
    idx = [slice(None)] * v.ndim
    idx[ax] = slice(0, None, 2)
    return full[tuple(idx)]
