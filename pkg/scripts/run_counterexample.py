#!/usr/bin/env python3
"""Sweep the flat-curve family and print the p=1 divergence table.

For each N in the range the script builds the length-2 curve whose
p=1 flatness sum grows like log N while its p=2 sum stays bounded,
then prints one row per N with both readings.  The per-N measurement
is shared between the two exponents, so the sweep costs one pass.
"""

from __future__ import annotations

import argparse
import sys
import time
from math import log
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from laakso_tst.inverse_system import get_system
from laakso_tst.tst_verify import (
    counterexample_curve,
    jones_records,
    jones_sum,
    write_jones_csv,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="diamond")
    ap.add_argument("--n-min", type=int, default=2)
    ap.add_argument("--n-max", type=int, default=6)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", type=Path, default=None,
                    help="write one jones CSV per N here")
    args = ap.parse_args()

    sysm = get_system(args.system)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)

    print(f"{'N':>3} {'H1':>5} {'p1 lo':>9} {'p1 lo/logN':>11} "
          f"{'p2 hi':>9} {'secs':>7}")
    prev_lo = None
    for N in range(args.n_min, args.n_max + 1):
        t0 = time.time()
        curve = counterexample_curve(sysm, N)
        recs = jones_records(sysm, curve, N, threads=args.threads)
        r1 = jones_sum(sysm, curve, 1, N, records=recs)
        r2 = jones_sum(sysm, curve, 2, N, records=recs)
        dt = time.time() - t0
        lo = float(r1.total_lo)
        mark = ""
        if prev_lo is not None and lo <= prev_lo:
            mark = "  <- not increasing"
        prev_lo = lo
        print(f"{N:>3} {float(r1.curve_length):>5.2f} {lo:>9.4f} "
              f"{lo / log(N):>11.4f} {float(r2.total_hi):>9.4f} "
              f"{dt:>7.1f}{mark}")
        if args.out_dir:
            write_jones_csv(r1, args.out_dir / f"sum_p1_N{N}.csv")
            write_jones_csv(r2, args.out_dir / f"sum_p2_N{N}.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
