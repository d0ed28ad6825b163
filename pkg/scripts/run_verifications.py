"""Run the convergence experiments with their default settings and print a summary.

    python3 scripts/run_verifications.py [--out runs] [--only slow1 fast-b] [--long]

Each suite writes snapshot CSVs, an errors CSV and a JSON report under
--out/<suite>/. The border suite runs only with --long.
"""
import argparse
import time
from pathlib import Path

from pmelab import experiments as E
from pmelab.params import Params, derive_exponents
from pmelab.pde import CompactBump, Constant, GridSpec
from pmelab.reference import SelfSimilar

P3 = Params(2, 3, 1, 1)
P6 = Params(2, 6, 1, 1)
P6_2D = Params(2, 6, 1, 2)
LADDER = [10.0, 100.0, 1000.0]
SUITES = ["slow1", "slow2", "fast-b", "fast-w", "bound", "rescale", "border"]


def run(name, out: Path):
    s = lambda kind: E.default_settings(kind, out)
    if name == "slow1":
        return E.run_slow1(P3, Constant(1.0), LADDER, settings=s("slow1"))
    if name == "slow2":
        return E.run_slow2(P3, 1.0, LADDER, settings=s("slow2"))
    if name == "fast-b":
        A, traj, _ = E.astar_profile(P6)
        ex = derive_exponents(P6)
        # c = 0.5 is excluded: its error changes sign at the centre near t = 1000
        return E.run_fast_barenblatt(P6, CompactBump(10.0, 1.0), LADDER, (1.0, 2.0), settings=s("fast-b"),
                                     bound_profile=SelfSimilar(traj, ex.alpha, ex.beta))
    if name == "fast-w":
        return E.run_fast_w(P6_2D, 1.5, 1.0, LADDER, settings=s("fast-w"))
    if name == "bound":
        return E.run_universal_bound(P3, Constant(2.0), LADDER, settings=s("bound"))
    if name == "rescale":
        _, traj, _ = E.astar_profile(P3)
        return E.run_rescale_checks(P3, traj, settings=E.RunSettings(GridSpec(256, 8.0), out_dir=out))
    if name == "border":
        return E.run_border(P6, 1.0, [1e2, 1e3, 1e4], settings=s("border"))
    raise ValueError(name)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", nargs="+", choices=SUITES)
    ap.add_argument("--long", action="store_true", help="include the border suite")
    args = ap.parse_args(argv)
    names = args.only or [n for n in SUITES if n != "border" or args.long]
    failed = 0
    for name in names:
        out = Path(args.out) / name
        t0 = time.time()
        try:
            rep = run(name, out)
        except E.NonConvergedMass as exc:
            print(f"{name:8s} NonConvergedMass: {exc}")
            failed += 1
            continue
        print(f"{name:8s} {rep.verdict:14s} {time.time() - t0:6.1f} s  -> {out}")
        for c, series in rep.errors.items():
            print(f"    c={c:g}: " + " ".join(f"{e:.3e}" for e in series))
        failed += not rep.passed
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
