#!/usr/bin/env python3
"""Emit a seeded random point cloud as a JSON file the CLI can ingest.

Points are (edge, offset) pairs at the requested depth, written with
exact rational offsets.  The same seed and config always produce the
same file, so generated clouds can be referenced in scripts and issue
reports by their parameters alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from laakso_tst.cli import generate_points
from laakso_tst.fracs import format_fraction
from laakso_tst.inverse_system import get_system


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="diamond")
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    sysm = get_system(args.system)
    pts = generate_points(sysm, args.depth, args.count, args.seed)
    payload = [[p.edge, format_fraction(p.offset)] for p in pts]
    args.out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"{len(payload)} points at depth {args.depth} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
