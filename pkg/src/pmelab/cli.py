"""Command line entry point.

    pmelab exponents --config p3.json
    pmelab verify slow1 --config p3.json --out runs/

Exit codes: 0 success, 2 failed verdict, 1 error, 64 usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ode import Controls, ProfileODE, shoot, trajectory_to_csv
from .params import Params, derive_exponents, params_from_dict
from . import registry as reg
from .pde import GridSpec, SolverConfig, build_initial, data_from_dict, simulate, write_manifest, write_snapshot

EXIT_OK, EXIT_ERROR, EXIT_VERDICT, EXIT_USAGE = 0, 1, 2, 64
DEFAULT_PARAMS = {"m": 2, "p": 3, "sigma": 1, "dim": 1}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="JSON config file")
    p.add_argument("--out", default=d("runs"), help="output directory")
    p.add_argument("--seed", type=int, default=d(0), help="seed for randomized checks")
    p.add_argument("--long", action="store_true", default=d(False), help="enable long-running suites")
    p.add_argument("--registry", default=d(None), help="registry file (default: packaged)")
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pmelab", description="Self-similar profiles and large-time experiments",
                 parents=[_common(False)])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_common(True)]
    sub.add_parser("exponents", parents=common, help="print derived exponents")
    p = sub.add_parser("profile", parents=common, help="integrate one profile")
    p.add_argument("--A", type=float, required=True)
    p.add_argument("--xi-max", type=float, default=1e3)
    p = sub.add_parser("sweep", parents=common, help="classify tails over a geometric grid of A")
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--n", type=int, default=64)
    for name in ("find-astar", "find-aofk", "find-vss"):
        p = sub.add_parser(name, parents=common)
        p.add_argument("--record", action="store_true", help="store the value in the registry")
        if name == "find-aofk":
            p.add_argument("--K", type=float, required=True)
    p = sub.add_parser("simulate", parents=common, help="run the solver on the configured data")
    p.add_argument("--t-end", type=float)
    p = sub.add_parser("verify", parents=common, help="run a verification suite")
    p.add_argument("suite", choices=["slow1", "slow2", "fast-b", "fast-w", "border", "bound", "rescale"])
    sub.add_parser("registry", parents=common, help="list stored golden values")
    return ap


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _params(cfg) -> Params:
    return params_from_dict(cfg.get("params", DEFAULT_PARAMS))


def _settings(kind: str, cfg: dict, out):
    from .experiments import default_settings
    s = default_settings(kind, out)
    g, sv = cfg.get("grid"), cfg.get("solver")
    if g:
        s = replace(s, grid=GridSpec(**{**s.grid.__dict__, **g}))
    if sv:
        s = replace(s, solver=SolverConfig(**{**s.solver.__dict__, **sv}))
    return s


def _print_table(rows):
    w = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{w}}  {v}")


def cmd_exponents(args, cfg):
    P = _params(cfg)
    ex = derive_exponents(P)
    _print_table([("params", P.key)] + [(k, repr(v)) for k, v in ex.to_dict().items()])
    return EXIT_OK


def cmd_profile(args, cfg):
    P = _params(cfg)
    traj = shoot(ProfileODE.full(P), args.A, Controls(xi_max=args.xi_max))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"profile_A{args.A:.12g}.csv"
    trajectory_to_csv(traj, path)
    print(f"A={args.A!r} tail={traj.tail} termination={traj.termination.kind.value} "
          f"xi_end={traj.xi[-1]:.6g} -> {path}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    from .shooting import default_bracket, sweep_A, transitions
    P = _params(cfg)
    lo, hi = default_bracket(P)
    lo = args.lo if args.lo is not None else lo
    hi = args.hi if args.hi is not None else hi
    grid = np.geomspace(lo, hi, args.n)
    rows = sweep_A(P, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w") as fh:
        fh.write("A,kind,constant,error\n")
        for r in rows:
            kind = r.tail.kind.value if r.tail else ""
            const = "" if r.tail is None or r.tail.constant is None else repr(r.tail.constant)
            fh.write(f"{r.A!r},{kind},{const},{r.error or ''}\n")
    for A, a, b in transitions(rows):
        print(f"transition at A={A:.10g}: {a.value} -> {b.value}")
    print(f"{len(rows)} rows -> {path}")
    return EXIT_OK


def _report_value(args, key, value, kind, tol, record):
    R = reg.Registry(args.registry)
    d = R.compare(key, value)
    msg = f"{key}: {value!r}"
    if d.stored is not None:
        msg += f" (registry {d.stored!r}, rel diff {d.rel:.2e})"
    print(msg)
    if record:
        R.put(key, value, tol, {"rel_tol": Controls().rel_tol}, kind)
        R.save()
        print(f"recorded in {R.path}")
    return EXIT_OK


def cmd_find_astar(args, cfg):
    from .shooting import find_astar
    P = _params(cfg)
    A, cert = find_astar(P)
    print(f"bracket [{cert.lo!r}, {cert.hi!r}] after {cert.iterations} bisections; "
          f"extended tail {cert.estimate_trajectory.tail}")
    return _report_value(args, reg.key_astar(P), A, "A_star", cert.width / A, args.record)


def cmd_find_aofk(args, cfg):
    from .shooting import find_a_of_k
    P = _params(cfg)
    A, cert = find_a_of_k(P, args.K)
    print(f"plateau {cert.estimate_trajectory.tail}")
    return _report_value(args, reg.key_a_of_k(P, args.K), A, "A_of_K", 1e-8, args.record)


def cmd_find_vss(args, cfg):
    from .shooting import find_vss
    P = _params(cfg)
    A, cert = find_vss(P)
    print(f"lower witness {cert.class_lo}, upper witness {cert.class_hi} (exploratory)")
    return _report_value(args, reg.key_vss(P), A, "A_vss", cert.width / A, args.record)


def _experiment(cfg) -> dict:
    return dict(cfg.get("experiment", {}))


def cmd_simulate(args, cfg):
    P = _params(cfg)
    exp = _experiment(cfg)
    if "data" not in exp:
        raise UsageError("simulate needs experiment.data in the config")
    data = data_from_dict(exp["data"])
    ladder = [float(t) for t in exp.get("ladder", [1.0])]
    t_end = args.t_end if args.t_end is not None else max(ladder)
    from .experiments import DEFAULTS
    kind = exp.get("kind")
    s = _settings(kind if kind in DEFAULTS else "fast-b", cfg, args.out)
    grid = s.grid.build(P.dim)
    f0 = build_initial(data, grid, P)
    probes = [t for t in ladder if t <= t_end]
    sim = simulate(f0, t_end, probes, s.solver)
    out = Path(args.out)
    for snap in sim.snapshots:
        write_snapshot(snap, out / f"simulate_u_t{snap.t:.6g}.csv")
    write_manifest(out / "simulate_manifest.json", P, grid, s.solver, probes, sim)
    for h in sim.ledger_history:
        print(f"t={h['t']:<10.6g} mass={h['current_mass']:.10g} absorbed={h['absorbed']:.6g} "
              f"outflux={h['boundary_outflux']:.3g} residual={h['residual']:.2e}")
    return EXIT_OK


def cmd_verify(args, cfg):
    from . import experiments as E
    from .pde import Constant, data_from_dict as dd
    P = _params(cfg)
    exp = _experiment(cfg)
    suite = args.suite
    ladder = exp.get("ladder", [10.0, 100.0, 1000.0])
    c_list = tuple(exp.get("c_list", E.DEFAULT_C))
    if suite == "slow1":
        data = dd(exp["data"]) if "data" in exp else Constant(1.0)
        rep = E.run_slow1(P, data, ladder, c_list, _settings("slow1", cfg, args.out), args.registry)
    elif suite == "slow2":
        rep = E.run_slow2(P, float(exp.get("K", 1.0)), ladder, c_list, float(exp.get("cap", 10.0)),
                          _settings("slow2", cfg, args.out), args.registry)
    elif suite == "fast-b":
        data = dd(exp["data"]) if "data" in exp else E.CompactBump(10.0, 1.0)
        rep = E.run_fast_barenblatt(P, data, ladder, c_list, _settings("fast-b", cfg, args.out))
    elif suite == "fast-w":
        rep = E.run_fast_w(P, float(exp.get("theta", 1.5)), float(exp.get("l", 1.0)), ladder, c_list,
                           _settings("fast-w", cfg, args.out), args.registry)
    elif suite == "border":
        if not args.long:
            raise UsageError("the border suite is long-running; pass --long")
        ladder = exp.get("ladder", [1e2, 1e3, 1e4])
        rep = E.run_border(P, float(exp.get("l", 1.0)), ladder, c_list, _settings("border", cfg, args.out))
    elif suite == "bound":
        data = dd(exp["data"]) if "data" in exp else Constant(1.0)
        rep = E.run_universal_bound(P, data, ladder, _settings("bound", cfg, args.out), args.registry)
    else:
        rng = np.random.default_rng(args.seed)
        _, traj, _ = E.astar_profile(P, args.registry)
        lambdas = tuple(np.exp(rng.uniform(-2, 2, 4)))
        times = tuple(np.exp(rng.uniform(-1, 2, 3)))
        rep = E.run_rescale_checks(P, traj, lambdas, times,
                                   E.RunSettings(GridSpec(256, 8.0), out_dir=Path(args.out)))
    print(f"{rep.theorem}: verdict {rep.verdict}")
    for c, series in rep.errors.items():
        print(f"  c={c:g}: " + " ".join(f"{e:.4e}" for e in series))
    for k, v in rep.extra.items():
        if isinstance(v, (int, float)):
            print(f"  {k} = {v:.6g}")
    return EXIT_OK if rep.passed else EXIT_VERDICT


def cmd_registry(args, cfg):
    R = reg.Registry(args.registry)
    for key in sorted(R.entries):
        e = R.entries[key]
        print(f"{key:40s} {e.get('kind', ''):8s} {e['value']!r:24s} tol={e['tol']:.1e} {e['date']}")
    return EXIT_OK


COMMANDS = {
    "exponents": cmd_exponents, "profile": cmd_profile, "sweep": cmd_sweep,
    "find-astar": cmd_find_astar, "find-aofk": cmd_find_aofk, "find-vss": cmd_find_vss,
    "simulate": cmd_simulate, "verify": cmd_verify, "registry": cmd_registry,
}


def cli_main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"pmelab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # reported, mapped to the error exit code
        print(f"pmelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(cli_main())
