"""Compute the golden shooting values and store them in the package registry.

    python3 scripts/build_registry.py [--rel-tol 1e-11] [--only astar]
"""
import argparse
import time
from dataclasses import asdict

from pmelab.ode import Controls
from pmelab.params import Params
from pmelab import registry as reg
from pmelab.shooting import find_a_of_k, find_astar, find_pme_profile, find_vss

P3 = Params(2, 3, 1, 1)
P6 = Params(2, 6, 1, 1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rel-tol", type=float, default=1e-11)
    ap.add_argument("--path", default=None)
    ap.add_argument("--only", choices=["astar", "aofk", "vss", "pme"], action="append")
    args = ap.parse_args(argv)
    ctl = Controls(rel_tol=args.rel_tol)
    settings = {k: v for k, v in asdict(ctl).items() if v is not None}
    R = reg.Registry(args.path)
    want = set(args.only or ["astar", "aofk", "vss", "pme"])

    def log(key, value, t0):
        print(f"{key:40s} {value!r:24s} {time.time() - t0:6.1f} s", flush=True)

    certs = {}
    if want & {"astar", "aofk"}:
        for P in (P3, P6):
            t0 = time.time()
            A, cert = find_astar(P, controls=ctl, tol=1e-10)
            certs[P] = cert
            R.put(reg.key_astar(P), A, cert.width / A, settings, "A_star")
            log(reg.key_astar(P), A, t0)
    if "aofk" in want:
        t0 = time.time()
        A, _ = find_a_of_k(P3, 1.0, astar_cert=certs[P3], controls=ctl)
        R.put(reg.key_a_of_k(P3, 1.0), A, 1e-8, settings, "A_of_K")
        log(reg.key_a_of_k(P3, 1.0), A, t0)
    if "vss" in want:
        t0 = time.time()
        A, cert = find_vss(P3, bracket=(0.5, 0.9), controls=ctl)
        R.put(reg.key_vss(P3), A, cert.width / A, settings, "A_vss")
        log(reg.key_vss(P3), A, t0)
    if "pme" in want:
        for m, N, theta, l in ((2, 2, 1.5, 1.0), (2, 2, 1.0, 1.0)):
            t0 = time.time()
            f0 = find_pme_profile(m, N, theta, l, controls=ctl)
            R.put(reg.key_pme(m, N, theta, l), f0, 1e-7, settings, "f0")
            log(reg.key_pme(m, N, theta, l), f0, t0)
    R.save()
    print(f"wrote {len(R)} entries to {R.path}")


if __name__ == "__main__":
    main()
