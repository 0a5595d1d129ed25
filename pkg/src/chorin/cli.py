"""Command-line entry point.

chorin {run,periodic,hodge,convergence,poincare,grid} [--config FILE] [--out DIR] ...

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .errors import ChorinError, ConfigError, NumericalFailure
from .grid import DomainSpec

SCHEMA_VERSION = 1
COMMANDS = ("run", "periodic", "hodge", "convergence", "poincare", "grid")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "domain": {"kind": "ball", "center": [0.0, 0.0, 0.0], "radius": 1.0},
    "h": 0.12,
    "nu": 1.0,
    "time": {"tau": None, "scaling": None, "theta": 1.0, "T": None, "steps": None},
    "tol": {"hodge": 1e-12, "momentum": 1e-12},
    "initial": {"kind": "zero"},
    "forcing": {"kind": "zero"},
    "output": {"every": 0, "ring": 4, "vtk": True},
    "periodic": {"T1": 10, "accel": "picard", "window": 5, "tol": 1e-8, "max_iter": 200,
                 "alpha": None, "eps": [1.0]},
    "convergence": {"bc": "torus", "levels": [8, 16, 32], "scaling": "h2", "theta": 1.0,
                    "T": 0.25, "solution": None},
    "hodge": {"fields": 20},
    "seed": 0,
}

_DOMAIN_KEYS = {
    "ball": {"center", "radius"},
    "ellipsoid": {"center", "semiaxes"},
    "rounded_box": {"center", "half_extents", "corner_radius"},
    "torus": {"N"},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict) and k not in ("domain", "initial", "forcing"):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def domain_from_dict(d) -> DomainSpec:
    if not isinstance(d, dict) or d.get("kind") not in _DOMAIN_KEYS:
        raise ConfigError(f"domain.kind: must be one of {sorted(_DOMAIN_KEYS)}")
    extra = set(d) - {"kind"} - _DOMAIN_KEYS[d["kind"]]
    if extra:
        raise ConfigError(f"domain.{sorted(extra)[0]}: unknown key")
    try:
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k != "kind"}
        return DomainSpec(d["kind"], **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"domain: {exc}") from None


def load_config(path=None):
    raw = {}
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    return _merge(DEFAULTS, raw)


def _apply_flags(cfg, args):
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.tol is not None:
        cfg["tol"]["hodge"] = cfg["tol"]["momentum"] = args.tol
    if getattr(args, "h", None) is not None:
        cfg["h"] = args.h
    if getattr(args, "N", None) is not None:
        cfg["domain"] = {"kind": "torus", "N": args.N}
    for name in ("tau", "T", "steps", "theta", "scaling"):
        v = getattr(args, name, None)
        if v is not None and args.command != "convergence":
            cfg["time"][name] = v
    if args.command == "convergence":
        c = cfg["convergence"]
        if args.bc is not None:
            c["bc"] = args.bc
        if args.levels is not None:
            c["levels"] = [float(x) if "." in x else int(x) for x in args.levels.split(",")]
        if args.scaling is not None:
            c["scaling"] = args.scaling
        if args.theta is not None:
            c["theta"] = args.theta
        if args.T is not None:
            c["T"] = args.T
    if args.command == "periodic":
        p = cfg["periodic"]
        for name in ("T1", "accel", "alpha"):
            v = getattr(args, name, None)
            if v is not None:
                p[name] = v
    if args.command == "hodge" and args.fields is not None:
        cfg["hodge"]["fields"] = args.fields
    return cfg


def _resolve(cfg):
    """Fill derived defaults and validate; returns the resolved config dict."""
    cfg = copy.deepcopy(cfg)
    domain_from_dict(cfg["domain"])
    tm = cfg["time"]
    if tm["scaling"] is None and tm["tau"] is None:
        tm["tau"] = 0.01
    if tm["T"] is None and tm["steps"] is None:
        tm["steps"] = 10
    for desc in (cfg["initial"], cfg["forcing"]):
        if isinstance(desc, dict) and desc.get("kind") in ("random", "periodic") and "seed" not in desc:
            desc["seed"] = cfg["seed"]
    if cfg["domain"]["kind"] == "torus":
        cfg["h"] = 1.0 / cfg["domain"]["N"]
    c = cfg["convergence"]
    if c["solution"] is None:
        c["solution"] = "torus_tg_abc" if c["bc"] == "torus" else "ball_curl"
    if c["bc"] not in ("torus", "dirichlet"):
        raise ConfigError("convergence.bc: must be 'torus' or 'dirichlet'")
    if c["scaling"] not in ("h2", "h34"):
        raise ConfigError("convergence.scaling: must be 'h2' or 'h34'")
    if len(c["levels"]) < 3:
        raise ConfigError("convergence.levels: need at least 3 levels")
    p = cfg["periodic"]
    if int(p["T1"]) != p["T1"] or p["T1"] < 1:
        raise ConfigError("periodic.T1: must be a positive integer")
    if p["accel"] not in ("picard", "anderson"):
        raise ConfigError("periodic.accel: must be 'picard' or 'anderson'")
    if not 1 <= p["window"] <= 5:
        raise ConfigError("periodic.window: must lie in 1..5")
    if not p["tol"] > 0:
        raise ConfigError("periodic.tol: must be positive")
    if int(cfg["hodge"]["fields"]) != cfg["hodge"]["fields"] or cfg["hodge"]["fields"] < 1:
        raise ConfigError("hodge.fields: must be a positive integer")
    if int(cfg["output"]["every"]) != cfg["output"]["every"] or cfg["output"]["every"] < 0:
        raise ConfigError("output.every: must be a nonnegative integer")
    from .scenarios import _check_keys
    _check_keys(cfg["initial"], "initial")
    _check_keys(cfg["forcing"], "forcing")
    sim_config(cfg)
    return cfg


def sim_config(cfg, **over):
    from .stepper import SimConfig

    tm = cfg["time"]
    kw = dict(
        domain=domain_from_dict(cfg["domain"]),
        h=None if cfg["domain"]["kind"] == "torus" else cfg["h"],
        tau=tm["tau"], scaling=tm["scaling"], theta=tm["theta"], T=tm["T"], steps=tm["steps"],
        nu=cfg["nu"], hodge_tol=cfg["tol"]["hodge"], momentum_tol=cfg["tol"]["momentum"],
        forcing=cfg["forcing"], initial=cfg["initial"], output_every=cfg["output"]["every"],
        ring=cfg["output"]["ring"],
    )
    kw.update(over)
    try:
        return SimConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None


# ---- subcommands ----

class Context:
    def __init__(self, cfg, out, threads):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.outputs = []
        self.grids = []
        self.timings = {}
        self.solver = {}
        self.summary = {}

    def path(self, name):
        p = os.path.join(self.out, name)
        self.outputs.append(name)
        return p

    def note_grid(self, grid):
        if grid.key not in self.grids:
            self.grids.append(grid.key)


def cmd_run(ctx):
    from .field import ScalarField
    from .io import write_field_csv, write_ledger_csv, write_vtk
    from .stepper import run

    cfg = sim_config(ctx.cfg)
    every = cfg.output_every
    dumps = []

    def observer(state):
        ctx.note_grid(state.grid)
        if ctx.cfg["output"]["vtk"] and every and state.n % every == 0:
            dumps.append(state.n)
            write_vtk(ctx.path(f"u_{state.n:06d}.vtk"), {"u": state.u, "u_tilde": state.u_tilde},
                      title=f"step {state.n}")

    t0 = time.perf_counter()
    try:
        traj, ledger = run(cfg, observer=observer, threads=ctx.threads)
    except NumericalFailure as exc:
        if getattr(exc, "ledger", None) is not None:
            write_ledger_csv(ctx.path("ledger.csv"), exc.ledger)
        raise
    ctx.timings["run"] = time.perf_counter() - t0
    write_ledger_csv(ctx.path("ledger.csv"), ledger)
    last = traj.last
    if ctx.cfg["output"]["vtk"] and last.n not in dumps:
        from .calculus import divergence
        write_vtk(ctx.path("u_final.vtk"), {"u": last.u, "u_tilde": last.u_tilde,
                                            "div_u": ScalarField(last.grid, divergence(last.u).values)},
                  title=f"step {last.n}")
    write_field_csv(ctx.path("u_final.csv"), last.u)
    violations = ledger.violations()
    ctx.summary = {"steps": cfg.n_steps, "tau": cfg.time_step, "points": traj.grid.n,
                   "final_norm_u": ledger.rows[-1].norm_u if ledger.rows else ledger.norm_u0,
                   "violations": violations}
    ctx.solver = {"momentum_iterations": int(sum(traj.momentum_iterations)),
                  "hodge_iterations": int(sum(traj.hodge_iterations))}
    print(f"run: {cfg.n_steps} steps, tau={cfg.time_step!r}, {traj.grid.n} points, "
          f"{len(violations)} estimate violations")
    if violations:
        raise NumericalFailure("energy estimates violated: " + "; ".join(violations[:3]))


def _periodic_setup(ctx):
    from .periodic_orbit import PeriodicForcing
    from .poincare import estimate_poincare_I
    from .scenarios import make_forcing
    from .stepper import Stepper

    p = ctx.cfg["periodic"]
    cfg = sim_config(ctx.cfg, tau=1.0 / p["T1"], scaling=None, T=None, steps=p["T1"])
    grid = cfg.build_grid()
    ctx.note_grid(grid)
    fn = make_forcing(ctx.cfg["forcing"], cfg.domain, cfg.nu)
    forcing = PeriodicForcing(fn, grid, p["T1"])
    if p["alpha"] is not None:
        forcing = forcing.with_alpha(p["alpha"])
    A_hat = None if grid.periodic else estimate_poincare_I(grid).value
    stepper = Stepper(grid, cfg.time_step, cfg.nu, cfg.hodge_tol, cfg.momentum_tol, ctx.threads)
    return grid, forcing, stepper, A_hat


def cmd_periodic(ctx):
    from .io import write_csv, write_vtk
    from .periodic_orbit import find_fixed_point, orbit_periodicity

    p = ctx.cfg["periodic"]
    grid, base, stepper, A_hat = _periodic_setup(ctx)
    rows = []
    t0 = time.perf_counter()
    for eps in p["eps"]:
        forcing = base.scaled(eps)
        try:
            u0, rep = find_fixed_point(forcing, stepper, tol=p["tol"], max_iter=p["max_iter"],
                                       accel=p["accel"], m=p["window"], A_hat=A_hat)
        except NumericalFailure as exc:
            if exc.history:
                write_csv(ctx.path(f"residuals_eps{eps!r}.csv"), ["iteration", "residual"],
                          enumerate(exc.history, 1))
            raise
        check = orbit_periodicity(u0, forcing, stepper)
        from .field import l2_norm
        write_csv(ctx.path(f"residuals_eps{eps!r}.csv"), ["iteration", "residual"],
                  enumerate(rep.history, 1))
        if ctx.cfg["output"]["vtk"]:
            write_vtk(ctx.path(f"orbit_eps{eps!r}.vtk"), {"u_tilde0": u0}, title=f"fixed point eps={eps!r}")
        rows.append([eps, forcing.alpha, rep.iterations, rep.residual, check.max_gap, l2_norm(u0),
                     rep.max_speed, rep.beta0, rep.certified_small])
    ctx.timings["periodic"] = time.perf_counter() - t0
    write_csv(ctx.path("fixed_points.csv"),
              ["eps", "alpha", "iterations", "residual", "periodicity_gap", "norm_u_tilde0",
               "max_speed", "beta0", "certified_small"], rows)
    ctx.summary = {"A_hat": A_hat, "fixed_points": len(rows)}
    for r in rows:
        print(f"periodic: eps={r[0]!r} iterations={r[2]} residual={r[3]:.3e} "
              f"|u~0|={r[5]:.6g} certified_small={r[8]}")


def cmd_hodge(ctx):
    from .field import VectorField, l2_norm
    from .hodge import decompose, full_system_solve, verify_estimates
    from .io import write_csv
    from .poincare import estimate_poincare_II

    cfg = sim_config(ctx.cfg)
    grid = cfg.build_grid()
    ctx.note_grid(grid)
    tol = ctx.cfg["tol"]["hodge"]
    A_tilde = estimate_poincare_II(grid).value
    rng = np.random.default_rng(ctx.cfg["seed"])
    rows, failures = [], []
    t0 = time.perf_counter()
    for k in range(ctx.cfg["hodge"]["fields"]):
        u = VectorField(grid, rng.standard_normal((grid.n, 3)))
        nu_ = l2_norm(u)
        dec = decompose(u, tol, threads=ctx.threads)
        twice = decompose(dec.w, tol)
        idem = l2_norm(twice.w - dec.w)
        est = verify_estimates(u, dec, A_tilde)
        oracle = np.nan
        if grid.n <= 600:
            w_ref, _, _ = full_system_solve(u)
            oracle = l2_norm(w_ref - dec.w)
        div_ok = dec.residual_div <= 1e-9 * nu_ / grid.h
        idem_ok = idem <= 1e-8 * nu_
        oracle_ok = np.isnan(oracle) or oracle <= 1e-8 * nu_
        if not (div_ok and idem_ok and est.ok and oracle_ok):
            failures.append(k)
        rows.append([k, nu_, dec.residual_div, idem, oracle, est.ok, dec.iterations])
    ctx.timings["hodge"] = time.perf_counter() - t0
    write_csv(ctx.path("hodge.csv"), ["field", "norm_u", "max_div", "idempotence_gap",
                                      "dense_oracle_gap", "estimates_hold", "cg_iterations"], rows)
    ctx.summary = {"fields": len(rows), "failures": failures, "A_tilde": A_tilde, "points": grid.n}
    print(f"hodge: {len(rows)} fields on {grid.n} points, {len(failures)} failing")
    if failures:
        raise NumericalFailure(f"decomposition checks failed for fields {failures}")


def cmd_convergence(ctx):
    from .harness import convergence_study, get_solution

    c = ctx.cfg["convergence"]
    ms = get_solution(c["solution"])
    bc = "torus" if c["bc"] == "torus" else domain_from_dict(ctx.cfg["domain"])
    if bc != "torus" and bc.kind == "torus":
        raise ConfigError("convergence.bc: dirichlet studies need a non-torus domain")
    t0 = time.perf_counter()
    table = convergence_study(ms, c["levels"], scaling=c["scaling"], theta=c["theta"], bc=bc,
                              T=c["T"], nu=ctx.cfg["nu"], hodge_tol=ctx.cfg["tol"]["hodge"],
                              momentum_tol=ctx.cfg["tol"]["momentum"], threads=ctx.threads)
    ctx.timings["convergence"] = time.perf_counter() - t0
    ctx.timings["levels"] = table.seconds
    with open(ctx.path("convergence.csv"), "w") as fh:
        fh.write(table.to_csv())
    report = table.report()
    with open(ctx.path("convergence.txt"), "w") as fh:
        fh.write(report)
    ctx.summary = {"orders": {k: f.order for k, f in table.fits.items()},
                   "flagged": [k for k, f in table.fits.items() if f.flagged]}
    print(report, end="")


def cmd_poincare(ctx):
    from .io import write_csv
    from .poincare import estimate_poincare_I, estimate_poincare_II

    cfg = sim_config(ctx.cfg)
    grid = cfg.build_grid()
    ctx.note_grid(grid)
    t0 = time.perf_counter()
    rows = []
    if not grid.periodic:
        e1 = estimate_poincare_I(grid)
        rows += [["A_hat", axis, v, it] for axis, (v, it) in enumerate(zip(e1.parts, e1.iterations))]
    e2 = estimate_poincare_II(grid)
    rows += [["A_tilde", blk, v, it] for blk, (v, it) in enumerate(zip(e2.parts, e2.iterations))]
    ctx.timings["poincare"] = time.perf_counter() - t0
    write_csv(ctx.path("poincare.csv"), ["constant", "part", "value", "iterations"], rows)
    ctx.summary = {"A_hat": None if grid.periodic else e1.value, "A_tilde": e2.value}
    if not grid.periodic:
        print(f"poincare: A_hat = {e1.value!r}")
    print(f"poincare: A_tilde = {e2.value!r}")


def cmd_grid(ctx):
    from .grid import boundary_gap_report
    from .io import write_grid_csv

    cfg = sim_config(ctx.cfg)
    grid = cfg.build_grid()
    ctx.note_grid(grid)
    write_grid_csv(ctx.path("grid.csv"), grid)
    summary = {"points": grid.n, "boundary": int(grid.boundary.sum()), "core": int(grid.core.sum())}
    if not grid.periodic:
        gap = boundary_gap_report(grid, cfg.domain)
        summary["gap"] = {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                          for k, v in gap.__dict__.items()}
        if not gap.ok:
            ctx.summary = summary
            raise NumericalFailure("boundary gap bounds violated")
    ctx.summary = summary
    print(f"grid: {grid.n} points, {summary['boundary']} boundary, {summary['core']} core")


HANDLERS = {"run": cmd_run, "periodic": cmd_periodic, "hodge": cmd_hodge,
            "convergence": cmd_convergence, "poincare": cmd_poincare, "grid": cmd_grid}


# ---- manifest ----

def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(type(o).__name__)


def write_manifest(path, data):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _manifest(command, cfg, ctx, status, exit_code=None, error=None):
    from .io import sha256_file

    outputs = []
    for name in ctx.outputs:
        p = os.path.join(ctx.out, name)
        if os.path.exists(p):
            outputs.append({"path": name, "sha256": sha256_file(p), "bytes": os.path.getsize(p)})
    return {
        "tool": "chorin", "version": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "command": command, "config": cfg, "threads": ctx.threads,
        "grid_hashes": ctx.grids,
        "solver": {"hodge_tol": cfg["tol"]["hodge"], "momentum_tol": cfg["tol"]["momentum"],
                   "hodge_method": "deflated cg per pressure block",
                   "momentum_method": "gmres, jacobi then ilu then dense lu", **ctx.solver},
        "outputs": outputs, "timings": ctx.timings, "summary": ctx.summary,
        "status": status, "exit_code": exit_code, "error": error,
    }


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (schema_version 1)")
    common.add_argument("--out", default=None, help="output directory (default ./chorin-out)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (fallback: CHORIN_GRID_THREADS, then 1)")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance for all linear solves")
    common.add_argument("--h", type=float, default=None, help="mesh size")
    common.add_argument("--N", type=int, default=None, help="torus points per axis (switches to the torus)")
    common.add_argument("--tau", type=float, default=None)
    common.add_argument("--T", type=float, default=None)
    common.add_argument("--steps", type=int, default=None)
    common.add_argument("--theta", type=float, default=None)
    common.add_argument("--scaling", choices=("h2", "h34"), default=None)

    parser = argparse.ArgumentParser(prog="chorin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"chorin {__version__}")
    parser.add_argument("--manifest", help="re-run the command recorded in a manifest")
    parser.add_argument("--out", dest="manifest_out", default=None,
                        help="output directory for --manifest re-runs")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("run", parents=[common], help="initial-value simulation: ledger CSV and VTK")
    p = sub.add_parser("periodic", parents=[common], help="time-periodic orbit by fixed-point iteration")
    p.add_argument("--T1", type=int, default=None, help="steps per unit period")
    p.add_argument("--accel", choices=("picard", "anderson"), default=None)
    p.add_argument("--alpha", type=float, default=None, help="rescale forcing to this unit-window L2 size")
    p = sub.add_parser("hodge", parents=[common], help="decomposition checks on random fields")
    p.add_argument("--fields", type=int, default=None)
    p = sub.add_parser("convergence", parents=[common], help="manufactured-solution refinement study")
    p.add_argument("--bc", choices=("torus", "dirichlet"), default=None)
    p.add_argument("--levels", default=None, help="comma-separated N (torus) or h (dirichlet) values")
    sub.add_parser("poincare", parents=[common], help="discrete Poincare constants of the grid")
    sub.add_parser("grid", parents=[common], help="build a grid, export points and gap report")
    return parser


def _threads(args):
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads: must be at least 1")
        return args.threads
    env = os.environ.get("CHORIN_GRID_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"CHORIN_GRID_THREADS: not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError("CHORIN_GRID_THREADS: must be at least 1")
        return n
    return 1


def execute(command, cfg, out, threads):
    """Run one resolved command with manifest bookkeeping; returns the exit code."""
    os.makedirs(out, exist_ok=True)
    ctx = Context(cfg, out, threads)
    mpath = os.path.join(out, "manifest.json")
    write_manifest(mpath, _manifest(command, cfg, ctx, "running"))
    t0 = time.perf_counter()
    code, err = 0, None
    try:
        HANDLERS[command](ctx)
    except ConfigError as exc:
        code, err = 2, str(exc)
    except (NumericalFailure, ChorinError) as exc:
        code, err = 1, f"{type(exc).__name__}: {exc}"
    ctx.timings["total"] = time.perf_counter() - t0
    status = "ok" if code == 0 else "failed"
    write_manifest(mpath, _manifest(command, cfg, ctx, status, code, err))
    if err:
        print(f"chorin {command}: {err}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.manifest:
            with open(args.manifest) as fh:
                man = json.load(fh)
            cfg = _resolve(_merge(DEFAULTS, man["config"]))
            out = args.manifest_out or os.path.dirname(os.path.abspath(args.manifest))
            return execute(man["command"], cfg, out, 1)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        cfg = _resolve(_apply_flags(load_config(args.config), args))
        threads = _threads(args)
        out = args.out or os.path.join(os.getcwd(), "chorin-out")
    except ConfigError as exc:
        print(f"chorin: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"chorin: cannot read manifest: {exc}", file=sys.stderr)
        return 2
    return execute(args.command, cfg, out, threads)


if __name__ == "__main__":
    sys.exit(main())
