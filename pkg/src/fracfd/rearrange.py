"""Discrete Schwarz symmetrization on periodic Cartesian grids.

Distribution functions, decreasing and spherical rearrangements, the
concentration order between radial profiles, and Marcinkiewicz / Lorentz
gauges.  Also houses the Grid and Field containers and their file formats.
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exponents import DomainError


def omega(N: int) -> float:
    """Volume of the unit ball in R^N, |B_r| = omega_N r^N."""
    return math.pi ** (N / 2.0) / math.gamma(N / 2.0 + 1.0)


@dataclass(frozen=True)
class Grid:
    """Periodic box [-L, L)^N sampled with n points per axis."""

    N: int
    L: float
    n: int

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise DomainError(f"grid dimension must be 1, 2 or 3, got {self.N}")
        if self.n <= 0 or self.n % 2:
            raise DomainError(f"points per axis must be positive and even, got {self.n}")
        if not self.L > 0:
            raise DomainError(f"half length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell_measure(self) -> float:
        return self.h ** self.N

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.N

    @property
    def size(self) -> int:
        return self.n ** self.N

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @property
    def origin_index(self) -> tuple:
        return (self.n // 2,) * self.N

    def coords(self) -> list:
        return np.meshgrid(*([self.axis] * self.N), indexing="ij")

    def radius(self) -> np.ndarray:
        ax2 = self.axis ** 2
        r2 = np.zeros(self.shape)
        for d in range(self.N):
            sh = [1] * self.N
            sh[d] = self.n
            r2 = r2 + ax2.reshape(sh)
        return np.sqrt(r2)

    def points(self) -> np.ndarray:
        """Cell centers as an (n^N, N) array in lexicographic order."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    def zoom_out(self) -> "Grid":
        return Grid(self.N, 2.0 * self.L, self.n)

    def as_dict(self) -> dict:
        return {"N": self.N, "L": float(self.L), "n": self.n}


@dataclass(frozen=True)
class Field:
    """Sampled function on a Grid, values shaped (n,)*N."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_measure)

    def norm(self, p: float) -> float:
        v = np.abs(self.values)
        if math.isinf(p):
            return float(v.max())
        return float((np.sum(v ** p) * self.grid.cell_measure) ** (1.0 / p))

    @staticmethod
    def from_function(grid: Grid, fn) -> "Field":
        return Field(grid, fn(grid.radius()))


@dataclass(frozen=True)
class RadialProfile:
    """Non-increasing values f*(s_j) at measure points s_j = (j + 1/2) * cell_measure."""

    cell_measure: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("profile values must be finite and nonnegative")
        if v.size > 1 and np.any(np.diff(v) > 0):
            raise DomainError("profile values must be non-increasing")
        object.__setattr__(self, "values", v)

    @property
    def s(self) -> np.ndarray:
        return (np.arange(self.values.size) + 0.5) * self.cell_measure

    def prefix(self) -> np.ndarray:
        """Integral of f* over (0, (J+1) cell_measure) for every J."""
        return np.cumsum(self.values) * self.cell_measure

    def norm(self, p: float) -> float:
        if math.isinf(p):
            return float(self.values[0]) if self.values.size else 0.0
        return float((np.sum(self.values ** p) * self.cell_measure) ** (1.0 / p))


class Verdict(enum.Enum):
    LESS_OR_EQUAL = "LessOrEqual"
    GREATER_OR_EQUAL = "GreaterOrEqual"
    EQUAL = "Equal"
    INCOMPARABLE = "Incomparable"


@dataclass(frozen=True)
class ConcentrationReport:
    verdict: Verdict
    max_violation: float
    tolerance: float

    def holds(self) -> bool:
        """f is less concentrated than g (LessOrEqual or Equal)."""
        return self.verdict in (Verdict.LESS_OR_EQUAL, Verdict.EQUAL)


# ---------------------------------------------------------------------------
# rearrangements
# ---------------------------------------------------------------------------

def distribution_function(f: Field, k: float) -> float:
    """Measure of {|f| > k}."""
    if k < 0:
        raise DomainError("level must be nonnegative")
    return float(np.count_nonzero(np.abs(f.values) > k) * f.grid.cell_measure)


def decreasing_rearrangement(f: Field) -> RadialProfile:
    v = np.abs(f.values).ravel()
    return RadialProfile(f.grid.cell_measure, np.sort(v)[::-1])


def profile_distribution(p: RadialProfile, k: float) -> float:
    """Measure where the profile exceeds k."""
    return float(np.count_nonzero(p.values > k) * p.cell_measure)


def _shell_order(grid: Grid) -> np.ndarray:
    """Cell indices ranked by distance from the origin.

    Ties go to the lexicographically smaller index (stable sort on the
    flat index order).
    """
    return np.argsort(grid.radius().ravel(), kind="stable")


def spherical_rearrangement(f: Field) -> Field:
    prof = decreasing_rearrangement(f)
    out = np.empty(f.grid.size)
    out[_shell_order(f.grid)] = prof.values
    return Field(f.grid, out)


def radial_read(f: Field) -> RadialProfile:
    """Read a field along shells (closest cell first) without sorting values.

    For a radially non-increasing centered field this agrees with the
    decreasing rearrangement.  Raises if the shell reading increases.
    """
    return RadialProfile(f.grid.cell_measure, np.abs(f.values).ravel()[_shell_order(f.grid)])


def _check_pair(f: RadialProfile, g: RadialProfile):
    if f.values.size != g.values.size or not math.isclose(f.cell_measure, g.cell_measure,
                                                          rel_tol=1e-12):
        raise ValueError("profiles differ in length or cell measure")


def concentration_compare(f: RadialProfile, g: RadialProfile, tol: float = 0.0) -> ConcentrationReport:
    """Compare all prefix integrals of f and g.

    max_violation is the largest signed gap max_J (F_J - G_J), so a
    LessOrEqual verdict means max_violation <= tol.
    """
    _check_pair(f, g)
    gap = f.prefix() - g.prefix()
    up, down = float(gap.max(initial=0.0)), float((-gap).max(initial=0.0))
    le, ge = up <= tol, down <= tol
    if le and ge:
        verdict = Verdict.EQUAL
    elif le:
        verdict = Verdict.LESS_OR_EQUAL
    elif ge:
        verdict = Verdict.GREATER_OR_EQUAL
    else:
        verdict = Verdict.INCOMPARABLE
    return ConcentrationReport(verdict, up, tol)


def convex_test_compare(f: RadialProfile, g: RadialProfile, levels: Sequence[float],
                        rtol: float = 1e-12) -> bool:
    """Check int (f - k)_+ <= int (g - k)_+ at every level k."""
    _check_pair(f, g)
    levels = np.asarray(list(levels), dtype=float)
    if levels.size == 0:
        raise DomainError("levels must be nonempty")
    fv, gv = f.values[None, :], g.values[None, :]
    lk = levels[:, None]
    If = np.maximum(fv - lk, 0.0).sum(axis=1)
    Ig = np.maximum(gv - lk, 0.0).sum(axis=1)
    scale = max(f.values.sum(), g.values.sum(), 1e-300)
    return bool(np.all(If <= Ig + rtol * scale))


# ---------------------------------------------------------------------------
# gauges
# ---------------------------------------------------------------------------

class Gauge(enum.Enum):
    COEFFICIENT = "Coefficient"
    SUP_LEVEL = "SupLevel"
    INTEGRAL = "Integral"


def _profile_of(f) -> tuple[RadialProfile, int]:
    if isinstance(f, Field):
        return decreasing_rearrangement(f), f.grid.N
    raise TypeError("expected a Field")


def marcinkiewicz_gauge(f: Field, p: float, convention: Gauge = Gauge.COEFFICIENT) -> float:
    """Weak-L^p size of f.

    Coefficient: sup_x |x|^{N/p} f^#(x) over the cells of the spherical
                 rearrangement, the origin cell at the sampling offset
                 h sqrt(N)/2 (so sampled |x|^{-N/p} has gauge exactly 1).
    SupLevel:    sup_t t mu_f(t)^{1/p} over the observed levels.
    Integral:    sup_R |B_R|^{-(p-1)/p} int_{B_R} f^#.
    """
    if not p > 1:
        raise DomainError(f"p must exceed 1, got {p}")
    prof, N = _profile_of(f)
    v = prof.values
    if v.size == 0 or v[0] == 0:
        return 0.0
    if convention is Gauge.COEFFICIENT:
        g = f.grid
        r = np.sort(g.radius().ravel(), kind="stable")
        r[r == 0] = 0.5 * g.h * math.sqrt(N)
        return float(np.max(r ** (N / p) * v))
    if convention is Gauge.SUP_LEVEL:
        # level just below v_j: mu = (j + 1) cells
        mu = (np.arange(v.size) + 1.0) * prof.cell_measure
        return float(np.max(v * mu ** (1.0 / p)))
    if convention is Gauge.INTEGRAL:
        meas = (np.arange(v.size) + 1.0) * prof.cell_measure
        return float(np.max(prof.prefix() / meas ** ((p - 1.0) / p)))
    raise ValueError(convention)


def lorentz_norm(f: Field, p: float, q: float) -> float:
    """(int_0^inf [s^{1/p} f*(s)]^q ds/s)^{1/q}, midpoint rule on the measure grid.

    q = inf gives sup_s s^{1/p} f*(s).  Written so that q = p reproduces the
    discrete L^p norm exactly on piecewise constant profiles.
    """
    if not (1 <= p <= math.inf) or not (1 <= q <= math.inf):
        raise DomainError("need 1 <= p, q <= inf")
    prof, _ = _profile_of(f)
    v, c = prof.values, prof.cell_measure
    if v.size == 0 or v[0] == 0:
        return 0.0
    # exact integral of s^{q/p - 1} over each cell [j c, (j+1) c]
    j = np.arange(v.size, dtype=float)
    if math.isinf(q):
        edges = (j + 1.0) * c
        return float(np.max(edges ** (1.0 / p) * v)) if not math.isinf(p) else float(v[0])
    if math.isinf(p):
        raise DomainError("p = inf needs q = inf")
    e = q / p
    w = ((j + 1.0) ** e - j ** e) * c ** e / e
    return float(np.sum(w * v ** q) ** (1.0 / q))


def sampled_power_law(grid: Grid, gamma: float, coef: float = 1.0) -> Field:
    """coef |x|^{-gamma} with the origin cell taken at the offset (h/2, ..., h/2)."""
    r = grid.radius()
    r0 = 0.5 * grid.h * math.sqrt(grid.N)
    r = np.where(r == 0, r0, r)
    return Field(grid, coef * r ** (-gamma))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<iid")


def write_field(path, f: Field) -> None:
    """Binary: little-endian int32 N, int32 n, float64 L, then float64 values."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(f.grid.N, f.grid.n, float(f.grid.L)))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated field file")
    N, n, L = _HEADER.unpack_from(data)
    g = Grid(N, L, n)
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if vals.size != g.size:
        raise ValueError(f"payload has {vals.size} values, expected {g.size}")
    return Field(g, vals.reshape(g.shape).astype(float))


def write_field_csv(path, f: Field) -> None:
    pts = f.grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{d + 1}" for d in range(f.grid.N)] + ["value"])
        for i, (p, v) in enumerate(zip(pts, f.values.ravel())):
            w.writerow([i] + [repr(float(c)) for c in p] + [repr(float(v))])


def read_field_csv(path, L: Optional[float] = None) -> Field:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    N = len(head) - 2
    vals = np.array([float(r[-1]) for r in body])
    n = round(len(body) ** (1.0 / N))
    if L is None:
        x1 = np.array([float(r[1]) for r in body])
        L = -float(x1.min())
    return Field(Grid(N, L, n), vals.reshape((n,) * N))


def write_profile_csv(path, prof: RadialProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "value"])
        for s, v in zip(prof.s, prof.values):
            w.writerow([repr(float(s)), repr(float(v))])
