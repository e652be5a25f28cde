#!/usr/bin/env python3
"""Build a connected curve through a random cloud and print the ledger.

Generates a seeded random point cloud, runs the stage construction, and
prints what the certificates measured: curve length against the defect
sum, remainder accounting, and the containment margin.  Useful for
eyeballing how the measured constants move with depth and epsilon.
"""

from __future__ import annotations

import argparse
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from laakso_tst.fracs import parse_fraction
from laakso_tst.inverse_system import get_system
from laakso_tst.tst_construct import build_curve, make_params, perturb_cloud
from laakso_tst.tst_verify import curve_emit


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="diamond")
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--points", type=int, default=16)
    ap.add_argument("--epsilon", default="1/300",
                    help="flatness threshold, a rational like 1/300")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-curve", type=Path, default=None)
    args = ap.parse_args()

    sysm = get_system(args.system)
    rng = random.Random(args.seed)
    g = sysm.level(args.depth)
    s = g.scale
    raw = [(rng.randrange(g.num_edges), s * Fraction(rng.randrange(1, 64), 64))
           for _ in range(args.points)]
    E = perturb_cloud(sysm, raw, args.depth)
    params = make_params(sysm, args.depth,
                         epsilon=parse_fraction(args.epsilon))

    t0 = time.time()
    res = build_curve(sysm, E, params, threads=args.threads)
    dt = time.time() - t0
    rep = res.report

    print(f"system={args.system} depth={args.depth} |E|={len(E.points)} "
          f"epsilon={args.epsilon} seed={args.seed}")
    print(f"built in {dt:.1f}s: length={float(rep['length']):.4f} "
          f"root_level={rep['root_level']} runs={len(res.runs)} "
          f"joins={len(rep['joins'])}")
    cont = rep["containment"]
    print(f"containment: max_dist={cont['max_dist']} "
          f"bound={cont['bound']} passed={cont['passed']}")
    print(f"defect sum={float(rep['large_sum']):.4f} "
          f"residual_parts={rep['residual_parts']} "
          f"truncated_parts={rep['truncated_parts']}")
    print(f"checks: {rep['checks']}")
    for i, run in enumerate(res.runs):
        print(f"run {i}: root level {run.n0} edge {run.root_edge}, "
              f"{len(run.remainders)} remainders")
        for line in run.cert:
            val = "" if line.measured is None else f" measured={line.measured}"
            bnd = "" if line.bound is None else f" bound={line.bound}"
            print(f"  [{'ok' if line.passed else 'FAIL'}] "
                  f"{line.name}{val}{bnd}")
    if args.out_curve:
        curve_emit(res.curve, args.out_curve)
        print(f"curve written to {args.out_curve}")
    return 0 if cont["passed"] and all(rep["checks"].values()) else 2


if __name__ == "__main__":
    sys.exit(main())
