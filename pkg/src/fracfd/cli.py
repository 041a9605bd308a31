"""fracfd command line.

    fracfd kappa --N 3 --sigma 1 --alpha 1
    fracfd exponents --N 2 --sigma 1 --m 0.6
    fracfd simulate --config run.ini
    fracfd barenblatt --N 1 --sigma 1 --m 1 --n 1024 --L 16
    fracfd rearrange field.bin --p 2
    fracfd verify smoothing --N 1 --sigma 1 --m 1

Config files are INI; a section per block ([problem], [grid], [solver],
[datum], [profile], [check]) and flags override keys of the same name.
Outputs go to --out, or $FRACFD_OUT, or ./fracfd_out.  Every output
directory gets a manifest.json echoing the full configuration and a
SHA-256 over the files written.

Exit codes: 0 success / all checks pass, 1 a check failed, 2 usage or
domain error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evolve import Scheme, SolverConfig, SolverError, evolve
from .exponents import (DomainError, Nonlinearity, ProblemParams, best_constant_linear,
                        exponent_set, extinction_coefficients, kappa)
from .rearrange import (Gauge, Grid, decreasing_rearrangement, lorentz_norm,
                        marcinkiewicz_gauge, read_field, write_profile_csv)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "FRACFD_OUT"

DEFAULTS = {
    "problem": {"N": "1", "sigma": "1.0", "m": "1.0"},
    # empty grid keys fall back to the per-command defaults in GRID_DEFAULTS
    "grid": {"n": "", "L": ""},
    # empty solver keys fall back to per-command values (see _solver)
    "solver": {"dt_initial": "", "t_end": "", "dt_growth": "", "scheme": "SemiImplicit",
               "snapshots": "", "newton_tol": "1e-10", "stop_at_extinction": "true"},
    "datum": {"kind": "bump", "mass": "1.0", "width": "0.5", "cap": "1e4 1e5", "p": "2.0", "T": "1.0"},
    "profile": {"M": "1.0", "pre_zooms": "6", "dt_growth": "0.005", "times": "1 2 4",
                "lp": "2", "far_field": "true"},
    "check": {"tol": "", "count": "10", "times": "", "F0": "", "constants": ""},
}


# (command or suite, N) -> (n, L)
GRID_DEFAULTS = {
    ("smoothing", 1): (1024, 40.0), ("smoothing", 2): (128, 16.0), ("smoothing", 3): (32, 8.0),
    ("concentration", 1): (256, 4.0), ("concentration", 2): (64, 2.0), ("concentration", 3): (16, 2.0),
    ("extinction", 3): (64, 1.0),
    ("barenblatt", 1): (1024, 40.0), ("barenblatt", 2): (128, 8.0), ("barenblatt", 3): (32, 4.0),
    ("marcinkiewicz", 1): (16384, 250.0),
}
GRID_FALLBACK = (256, 16.0)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path, overrides: dict) -> dict:
    """Defaults, then the INI file, then flag overrides (section-qualified)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        cp.read(path)
    for (sec, key), val in overrides.items():
        if val is not None:
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, key, str(val))
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _params(conf) -> ProblemParams:
    p = conf["problem"]
    return ProblemParams(int(p["N"]), float(p["sigma"]), float(p["m"]))


def _grid(conf, N: int, kind: str = "") -> Grid:
    g = conf["grid"]
    n0, L0 = GRID_DEFAULTS.get((kind, N), GRID_FALLBACK)
    n = int(g["n"]) if g.get("n") else n0
    L = float(g["L"]) if g.get("L") else L0
    conf["grid"] = {"n": str(n), "L": repr(L)}
    return Grid(N, L, n)


SOLVER_FALLBACK = {"dt_initial": "1e-3", "t_end": "1.0", "dt_growth": "0.02", "snapshots": ""}
# extinction runs go to twice the unit bound so that a miss is a failure
SOLVER_EXTINCTION = {"dt_initial": "1e-2", "t_end": "2.2", "dt_growth": "0.0",
                     "snapshots": "0.1 0.25 0.5 0.75 0.9"}


def _solver(conf, fallback=SOLVER_FALLBACK) -> SolverConfig:
    s = conf["solver"]
    for k, v in fallback.items():
        if not s.get(k):
            s[k] = v
    return SolverConfig(dt_initial=float(s["dt_initial"]), t_end=float(s["t_end"]),
                        scheme=Scheme(s["scheme"]), dt_growth=float(s["dt_growth"]),
                        snapshot_times=tuple(_floats(s["snapshots"])),
                        newton_tol=float(s["newton_tol"]),
                        stop_at_extinction=_bool(s["stop_at_extinction"]))


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV) or "fracfd_out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _manifest(out: Path, command: str, conf: dict, seed, files: list, extra=None) -> str:
    """Write manifest.json; the hash covers the listed files in name order."""
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode())
        h.update((out / name).read_bytes())
    digest = h.hexdigest()
    _write_json(out / "manifest.json", {"command": command, "version": __version__,
                                       "config": conf, "seed": seed,
                                       "files": sorted(files), "sha256": digest,
                                       **(extra or {})})
    return digest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_kappa(args) -> int:
    N, s = args.N, args.sigma
    rows = [(a, kappa(a, N, s), kappa(N - s - a, N, s)) for a in args.alpha]
    print(f"{'alpha':>10} {'kappa':>14} {'kappa(N-s-a)':>14}")
    for a, k, kp in rows:
        print(f"{a:10.6g} {k:14.6f} {kp:14.6f}")
    return EXIT_OK


def cmd_exponents(args) -> int:
    prm = ProblemParams(args.N, args.sigma, args.m)
    ex = exponent_set(prm, args.p)
    for k, v in ex.as_dict().items():
        print(f"{k:>8} {'-' if v is None else f'{v:.10g}'}")
    if prm.m < prm.m_c:
        c = extinction_coefficients(prm)
        print(f"{'C1':>8} {c.C1:.10g}\n{'d':>8} {c.d:.10g}")
    return EXIT_OK


def _datum(conf, grid: Grid, prm: ProblemParams, seed: int):
    from .selfsim import dirac_datum, truncated_power_datum
    from .verify import explicit_extinction_setup, gaussian_bump, random_datum
    d = conf["datum"]
    kind, M = d["kind"], float(d["mass"])
    if kind == "bump":
        return gaussian_bump(grid, np.zeros(grid.N), float(d["width"]), M), None
    if kind == "dirac":
        return dirac_datum(grid, M), None
    if kind == "random":
        return random_datum(grid, np.random.default_rng(seed), mass=M), None
    if kind == "power":
        return truncated_power_datum(grid, float(d["p"]), M, _floats(d["cap"])[-1]), None
    if kind == "explicit":
        u0, ext, _ = explicit_extinction_setup(prm, grid.n, grid.L, float(d["T"]))
        return u0, ext
    raise UsageError(f"unknown datum kind {kind!r}")


def cmd_simulate(args, conf) -> int:
    prm = _params(conf)
    grid = _grid(conf, prm.N)
    cfg = _solver(conf)
    u0, ext = _datum(conf, grid, prm, args.seed)
    traj = evolve(u0, Nonlinearity.power(prm.m), prm, cfg, exterior=ext)
    out = _out_dir(args)
    traj.export(out / "trajectory")
    rows = [{"t": f"{t:.12g}", "sup": f"{s:.12g}", "mass": f"{m:.12g}"}
            for t, s, m in zip(traj.history["t"], traj.history["sup"], traj.history["mass"])]
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["t", "sup", "mass"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    files = ["history.csv", "trajectory/manifest.json", "trajectory/final.bin"]
    files += [f"trajectory/snapshot_{i:04d}.bin" for i in range(len(traj.snapshots))]
    digest = _manifest(out, "simulate", conf, args.seed, files,
                       {"extinction_time": traj.extinction_time})
    print(f"steps {traj.metadata['steps']}  final t {traj.final.t:.6g}  "
          f"extinction {traj.extinction_time}  sha256 {digest[:16]}")
    return EXIT_OK


def cmd_barenblatt(args, conf) -> int:
    from .selfsim import barenblatt_profile
    from .verify import constants_key, read_constants, write_constants
    prm = _params(conf)
    grid = _grid(conf, prm.N, "barenblatt")
    pc = conf["profile"]
    prof = barenblatt_profile(prm, float(pc["M"]), grid, times=_floats(pc["times"]),
                              pre_zooms=int(pc["pre_zooms"]), dt_growth=float(pc["dt_growth"]),
                              far_field=_bool(pc["far_field"]))
    out = _out_dir(args)
    prof.export(out / "profile.csv", out / "profile.json")
    norms = {f"{p:g}": prof.norm(p) for p in _floats(pc["lp"])}
    path = out / "constants.json"
    entries = read_constants(path) if path.exists() else {}
    entries[constants_key(prm)] = {"params": prm.as_dict(), "M": prof.M, "F0": prof.F0,
                                   "Lp": norms, "collapse": prof.collapse,
                                   "tail_exponent": None if prof.tail is None else prof.tail.exponent}
    write_constants(path, entries)
    digest = _manifest(out, "barenblatt", conf, args.seed,
                       ["profile.csv", "profile.json", "constants.json"])
    print(f"F0 {prof.F0:.8g}  collapse {prof.collapse:.3g}  "
          + " ".join(f"||F||_{k} {v:.8g}" for k, v in norms.items()) + f"  sha256 {digest[:16]}")
    return EXIT_OK


def cmd_rearrange(args, conf) -> int:
    f = read_field(args.field)
    out = _out_dir(args)
    write_profile_csv(out / "rearranged.csv", decreasing_rearrangement(f))
    gauges = {}
    for p in args.p:
        gauges[f"{p:g}"] = {g.value: marcinkiewicz_gauge(f, p, g) for g in Gauge}
        for q in args.q:
            gauges[f"{p:g}"][f"lorentz_q={q:g}"] = lorentz_norm(f, p, q)
    _write_json(out / "gauges.json", gauges)
    digest = _manifest(out, "rearrange", {"field": str(args.field), "p": args.p, "q": args.q},
                       args.seed, ["rearranged.csv", "gauges.json"])
    for p, g in gauges.items():
        print(f"p={p}: " + "  ".join(f"{k} {v:.8g}" for k, v in g.items()))
    print(f"sha256 {digest[:16]}")
    return EXIT_OK


def _constant(conf, prm: ProblemParams, what: str = "F0", p=None) -> float:
    from .verify import constants_key, read_constants
    ch = conf["check"]
    if what == "F0" and ch["F0"]:
        return float(ch["F0"])
    if ch["constants"]:
        entry = read_constants(ch["constants"]).get(constants_key(prm))
        if entry is not None:
            return float(entry["F0"] if what == "F0" else entry["Lp"][f"{p:g}"])
    if what == "F0" and prm.m == 1.0 and prm.sigma == 1.0:
        return best_constant_linear(prm.N)
    raise UsageError(f"no {what} for {prm.as_dict()}: pass --F0 or --constants")


def _suite(name: str, conf, seed: int):
    from . import verify as V
    prm = _params(conf)
    ch = conf["check"]
    tol = float(ch["tol"]) if ch["tol"] else None
    times = _floats(ch["times"]) if ch["times"] else None
    count = int(ch["count"])
    if name == "smoothing":
        grid = _grid(conf, prm.N, "smoothing")
        kw = {"times": times} if times else {}
        return V.smoothing_suite(prm, _constant(conf, prm), grid, seed, count,
                                 tol=tol if tol is not None else V.TOL_CLOSED_FORM, **kw)
    if name == "lp":
        grid = _grid(conf, prm.N, "smoothing")
        p = float(conf["datum"]["p"])
        Cp = _constant(conf, prm, "Lp", p)
        A = Nonlinearity.power(prm.m)
        ts = tuple(times or (0.5, 1.0, 2.0, 4.0))

        def make(u0):
            def run():
                cfg = SolverConfig(dt_initial=1e-4 * ts[0], t_end=ts[-1], snapshot_times=ts,
                                   dt_growth=0.005, lp_orders=(), stop_at_extinction=False)
                return V.check_smoothing_Lp(evolve(u0, A, prm, cfg), prm, p, Cp,
                                            tol if tol is not None else V.TOL_PROFILE)
            return run
        return [(lab, make(u0)) for lab, u0 in V.smoothing_data(grid, seed, count)]
    if name == "marcinkiewicz":
        from .selfsim import truncated_power_datum
        grid = _grid(conf, prm.N, "marcinkiewicz")
        d = conf["datum"]
        p = float(d["p"])
        if not ch["F0"]:
            raise UsageError("marcinkiewicz suite needs --F0 (the profile value F_p(0))")
        Fp0 = float(ch["F0"])
        ts = tuple(times or (1.0, 2.0, 4.0))
        A = Nonlinearity.power(prm.m)

        def run(cap):
            u0 = truncated_power_datum(grid, p, float(d["mass"]), cap)
            cfg = SolverConfig(dt_initial=1e-3, t_end=ts[-1], snapshot_times=ts, dt_growth=0.02,
                               lp_orders=(), stop_at_extinction=False)
            return V.check_smoothing_marcinkiewicz(evolve(u0, A, prm, cfg), prm, p, Fp0,
                                                   tol if tol is not None else V.TOL_PROFILE)
        caps = _floats(d["cap"])
        return [(f"cap={c:g}", (lambda c=c: run(c))) for c in caps]
    if name == "concentration":
        grid = _grid(conf, prm.N, "concentration")
        kw = {"times": times} if times else {}
        return V.concentration_suite(prm, grid, seed, count, tol=tol if tol is not None else 1e-3,
                                     **kw)
    if name in ("extinction", "general"):
        n = _grid(conf, prm.N, "extinction").n
        cfg = _solver(conf, SOLVER_EXTINCTION)
        t_ = tol if tol is not None else V.TOL_CLOSED_FORM

        def ext(T, A=None, factor=None):
            def run():
                u0, exterior, gauge = V.explicit_extinction_setup(prm, n, float(conf["grid"]["L"]), T)
                if factor is None:
                    return V.check_extinction_bound(u0, prm, cfg, t_, A=A, exterior=exterior,
                                                    gauge=gauge)
                return V.check_general_nonlinearity(u0, A, prm, cfg, None, "extinction", t_,
                                                    exterior=exterior)
            return run
        if name == "extinction":
            half = 0.5 ** (1.0 - prm.m)
            return [("explicit_T=1", ext(1.0)), ("half_datum", ext(half))]
        A2 = Nonlinearity.power(prm.m, 2.0)
        # A = 2 u^m runs the T = 1 datum at twice the speed
        return [("A=2u^m", ext(1.0, A2, True))]
    raise UsageError(f"unknown suite {name!r}")


def cmd_verify(args, conf) -> int:
    from .verify import run_suite, write_summary_csv
    checks = _suite(args.suite, conf, args.seed)
    results = run_suite(checks, args.jobs)
    out = _out_dir(args)
    report = {"suite": args.suite, "checks": [dict(label=lab, **rep.as_dict())
                                              for lab, rep in results]}
    _write_json(out / "report.json", report)
    write_summary_csv(out / "summary.csv", results)
    digest = _manifest(out, f"verify {args.suite}", conf, args.seed, ["report.json", "summary.csv"])
    ok = all(rep.passed for _, rep in results)
    worst = max((rep.worst_margin for _, rep in results), default=math.nan)
    for lab, rep in results:
        print(f"{'PASS' if rep.passed else 'FAIL'} {rep.theorem.value:<24} {lab:<28} "
              f"margin {rep.worst_margin:.6g}")
    print(f"{args.suite}: {sum(r.passed for _, r in results)}/{len(results)} pass, "
          f"worst margin {worst:.6g}, sha256 {digest[:16]}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

# flag name -> (section, key)
_OVERRIDES = {"N": ("problem", "N"), "sigma": ("problem", "sigma"), "m": ("problem", "m"),
              "n": ("grid", "n"), "L": ("grid", "L"),
              "t_end": ("solver", "t_end"), "dt_initial": ("solver", "dt_initial"),
              "datum": ("datum", "kind"), "mass": ("datum", "mass"), "p": ("datum", "p"),
              "cap": ("datum", "cap"),
              "M": ("profile", "M"), "pre_zooms": ("profile", "pre_zooms"),
              "dt_growth": ("profile", "dt_growth"),
              "tol": ("check", "tol"), "count": ("check", "count"), "F0": ("check", "F0"),
              "constants": ("check", "constants"), "times": ("check", "times")}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracfd", description="Fractional fast diffusion toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./fracfd_out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--config", help="INI configuration file")
    sub = ap.add_subparsers(dest="command", required=True)

    k = sub.add_parser("kappa", help="kappa(alpha) table")
    k.add_argument("--N", type=int, required=True)
    k.add_argument("--sigma", type=float, required=True)
    k.add_argument("--alpha", type=float, nargs="+", required=True)

    e = sub.add_parser("exponents", help="critical and smoothing exponents")
    e.add_argument("--N", type=int, required=True)
    e.add_argument("--sigma", type=float, required=True)
    e.add_argument("--m", type=float, required=True)
    e.add_argument("--p", type=float)

    def problem_flags(sp, extra=()):
        sp.add_argument("--N")
        sp.add_argument("--sigma")
        sp.add_argument("--m")
        sp.add_argument("--n")
        sp.add_argument("--L")
        for name in extra:
            sp.add_argument(f"--{name}")

    s = sub.add_parser("simulate", parents=[common], help="run the evolution")
    problem_flags(s, ("t_end", "dt_initial", "datum", "mass", "p", "cap"))
    b = sub.add_parser("barenblatt", parents=[common], help="Barenblatt profile and constants")
    problem_flags(b, ("M", "pre_zooms", "dt_growth"))
    r = sub.add_parser("rearrange", parents=[common], help="rearrangement and gauges of a field file")
    r.add_argument("field")
    r.add_argument("--p", type=float, nargs="+", default=[2.0])
    r.add_argument("--q", type=float, nargs="*", default=[])
    v = sub.add_parser("verify", parents=[common], help="theorem suites")
    v.add_argument("suite", choices=["smoothing", "lp", "marcinkiewicz", "concentration",
                                     "extinction", "general"])
    problem_flags(v, ("tol", "count", "F0", "constants", "times", "p", "cap", "mass", "t_end",
                      "dt_initial"))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "kappa":
            return cmd_kappa(args)
        if args.command == "exponents":
            return cmd_exponents(args)
        if args.command == "rearrange":
            return cmd_rearrange(args, {})
        overrides = {_OVERRIDES[k]: v for k, v in vars(args).items()
                     if k in _OVERRIDES and v is not None}
        conf = load_config(args.config, overrides)
        return {"simulate": cmd_simulate, "barenblatt": cmd_barenblatt,
                "verify": cmd_verify}[args.command](args, conf)
    except (DomainError, UsageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
