"""Command-line entry point with reproducible, file-driven runs.

Every command is a thin shell over one module: parse exact rationals
from the arguments, run the operation, serialize the result.  Numeric
output always carries the exact "num/den" form; decimal renderings are
a courtesy for humans and are never read back.  Re-running a command
with the same config writes byte-identical files, whatever --threads is.

Exit codes: 0 success, 2 validation failure, 1 input error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from math import log
from typing import List, Optional, Sequence

from .errors import InputError, LaaksoTstError, ParseError
from .fracs import format_fraction, parse_fraction
from .inverse_system import get_system, validate_axioms
from .limit_space import LimitPoint, ball_family, cube_family
from .metric_graph import GraphPoint
from .monotone_beta import PointCloud, beta_dp, write_beta_csv
from .tst_construct import build_curve, make_params
from .tst_verify import (counterexample_curve, curve_emit, curve_ingest,
                         jones_sum, write_jones_csv)


@dataclass
class RunConfig:
    """Everything one command run depends on; no hidden state."""
    command: str
    system: str
    max_level: Optional[int] = None
    depth: Optional[int] = None
    epsilon: Optional[Fraction] = None
    p: Optional[Fraction] = None
    a_mult: Optional[int] = None
    out: Optional[str] = None
    out_dir: Optional[str] = None
    out_curve: Optional[str] = None
    out_report: Optional[str] = None
    points: Optional[str] = None
    curve: Optional[str] = None
    region: str = "cube"
    n_range: Optional[str] = None
    seed: int = 0
    gen: Optional[int] = None
    threads: int = 1


def _dec(x) -> str:
    return repr(float(x))


def _frac_obj(x: Fraction) -> dict:
    return {"exact": format_fraction(x), "dec": _dec(x)}


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as input errors (exit 1)
    instead of calling sys.exit itself."""

    def error(self, message):
        raise ParseError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="laakso-tst", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, threads=False):
        sp.add_argument("--system", required=True,
                        help="diamond, laakso, or a system spec JSON path")
        sp.add_argument("--a-mult", type=int, default=None,
                        help="override the ball multiple A")
        if threads:
            sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("build", help="build levels and dump the graphs")
    common(sp)
    sp.add_argument("--max-level", type=int, required=True)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("validate", help="check the tower axioms")
    common(sp)
    sp.add_argument("--max-level", type=int, required=True)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("beta", help="beta of every region against a cloud")
    common(sp, threads=True)
    sp.add_argument("--points", default=None, help="points JSON file")
    sp.add_argument("--max-level", type=int, required=True)
    sp.add_argument("--depth", type=int, required=True)
    sp.add_argument("--region", choices=("cube", "ball"), default="cube")
    sp.add_argument("--out", required=True)
    sp.add_argument("--gen", type=int, default=None,
                    help="generate this many random points instead of --points")
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("verify-sum", help="Jones sum over a curve file")
    common(sp, threads=True)
    sp.add_argument("--curve", required=True)
    sp.add_argument("--p", required=True)
    sp.add_argument("--max-level", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("counterexample",
                        help="p = 1 spiked-curve sums across a level range")
    common(sp, threads=True)
    sp.add_argument("--n-range", required=True, help="e.g. 4..7")
    sp.add_argument("--p", default="1")
    sp.add_argument("--out", required=True)
    sp.add_argument("--out-dir", default=None,
                    help="also dump each curve JSON here")

    sp = sub.add_parser("construct",
                        help="connected curve through a point cloud")
    common(sp, threads=True)
    sp.add_argument("--points", default=None)
    sp.add_argument("--epsilon", default=None, help="rational, e.g. 1/300")
    sp.add_argument("--depth", type=int, required=True)
    sp.add_argument("--out-curve", required=True)
    sp.add_argument("--out-report", required=True)
    sp.add_argument("--gen", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    return parser


def parse_config(argv: Optional[Sequence[str]]) -> RunConfig:
    args = _build_parser().parse_args(argv)
    cfg = RunConfig(command=args.command, system=args.system)
    for name in ("max_level", "depth", "a_mult", "out", "out_dir",
                 "out_curve", "out_report", "points", "curve", "region",
                 "n_range", "seed", "gen", "threads"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "epsilon", None) is not None:
        cfg.epsilon = parse_fraction(args.epsilon)
    if getattr(args, "p", None) is not None:
        cfg.p = parse_fraction(args.p)
    return cfg


# -- input files ----------------------------------------------------------------


def load_points(system, path: str, depth: int) -> List[GraphPoint]:
    """Points file: JSON list; each entry is either an (edge, offset)
    pair at the given depth, or a full coordinate sequence, one
    (edge, offset) pair per level 0..depth, checked for consistency."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read points file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"points file {path} is not JSON: {exc}") from None
    if not isinstance(obj, list):
        raise ParseError("points file must hold a JSON list")
    out: List[GraphPoint] = []
    for i, item in enumerate(obj):
        if not isinstance(item, (list, tuple)) or not item:
            raise ParseError(f"point {i}: expected a pair or a sequence")
        if isinstance(item[0], (list, tuple)):
            if len(item) != depth + 1:
                raise ParseError(
                    f"point {i}: coordinate sequence must list levels "
                    f"0..{depth}")
            e, off = item[-1]
            p = GraphPoint(int(e), parse_fraction(off))
            lp = LimitPoint.from_point(system, depth, p, depth)
            for k, pair in enumerate(item):
                ek, offk = pair
                pk = lp.at(k)
                if pk.edge != int(ek) or pk.offset != parse_fraction(offk):
                    raise ParseError(
                        f"point {i}: level-{k} coordinates do not project "
                        f"from the depth entry")
            out.append(p)
        else:
            if len(item) != 2:
                raise ParseError(f"point {i}: pair must be [edge, offset]")
            out.append(GraphPoint(int(item[0]), parse_fraction(item[1])))
    return out


def generate_points(system, depth: int, count: int,
                    seed: int) -> List[GraphPoint]:
    """Seeded random cloud; a fixed seed fixes the points bit-exactly."""
    if count < 1:
        raise InputError("--gen needs a positive count")
    g = system.level(depth)
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        eid = rng.randrange(g.num_edges)
        off = g.scale * Fraction(rng.randrange(1, 64), 64)
        out.append(GraphPoint(eid, off))
    return out


def _cloud_arg(system, cfg: RunConfig, depth: int) -> List[GraphPoint]:
    if cfg.points is not None and cfg.gen is not None:
        raise InputError("give --points or --gen, not both")
    if cfg.points is not None:
        return load_points(system, cfg.points, depth)
    if cfg.gen is not None:
        return generate_points(system, depth, cfg.gen, cfg.seed)
    raise InputError("one of --points or --gen is required")


def _print(obj: dict) -> None:
    _sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------


def cmd_build(cfg: RunConfig) -> int:
    import os
    system = get_system(cfg.system)
    os.makedirs(cfg.out_dir, exist_ok=True)
    levels = []
    for n in range(cfg.max_level + 1):
        g = system.level(n)
        path = os.path.join(cfg.out_dir, f"level_{n}.json")
        g.dump(path)
        levels.append({"level": n, "vertices": g.num_vertices,
                       "edges": g.num_edges, "path": path})
    summary = {"system": system.name, "m": system.data.m,
               "eta": format_fraction(system.data.eta),
               "delta": system.data.delta,
               "c_eta": format_fraction(system.c_eta()),
               "default_A": system.default_ball_multiple(),
               "levels": levels}
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _print(summary)
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    system = get_system(cfg.system)
    report = validate_axioms(system, cfg.max_level)
    obj = report.to_json_dict()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    _print(obj)
    return 0 if report.passed else 2


def cmd_beta(cfg: RunConfig) -> int:
    system = get_system(cfg.system)
    if cfg.depth < cfg.max_level:
        raise InputError("--depth must be at least --max-level")
    pts = _cloud_arg(system, cfg, cfg.depth)
    cloud = PointCloud.from_graph_points(system, cfg.depth, pts, cfg.depth)
    if cfg.region == "cube":
        regions = cube_family(system, cfg.max_level, cfg.a_mult)
    else:
        regions = ball_family(system, cfg.max_level, cfg.depth, cfg.a_mult)

    def one(region):
        return beta_dp(system, cloud, region, cfg.depth)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(one, regions))
    else:
        results = [one(r) for r in regions]
    write_beta_csv(results, cfg.out)
    positive = sum(1 for r in results if r.beta_hi > 0)
    _print({"rows": len(results), "positive_beta": positive,
            "out": cfg.out, "region": cfg.region})
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    system = get_system(cfg.system)
    curve = curve_ingest(system, cfg.curve)
    kwargs = {} if cfg.a_mult is None else {"a_mult": cfg.a_mult}
    report = jones_sum(system, curve, cfg.p, cfg.max_level,
                       threads=cfg.threads, **kwargs)
    write_jones_csv(report, cfg.out)
    _print(report.to_json_dict())
    return 0


def _parse_range(text: str) -> List[int]:
    try:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise ParseError(f"bad range {text!r}, expected like 4..7") from None
    if hi < lo:
        raise ParseError("empty level range")
    return list(range(lo, hi + 1))


def cmd_counterexample(cfg: RunConfig) -> int:
    import os
    system = get_system(cfg.system)
    levels = _parse_range(cfg.n_range)
    kwargs = {} if cfg.a_mult is None else {"a_mult": cfg.a_mult}
    rows = []
    for n in levels:
        curve = counterexample_curve(system, n)
        report = jones_sum(system, curve, cfg.p, n, threads=cfg.threads,
                           **kwargs)
        rows.append((n, curve, report))
        if cfg.out_dir:
            os.makedirs(cfg.out_dir, exist_ok=True)
            curve_emit(curve, os.path.join(cfg.out_dir, f"curve_{n}.json"))
    lines = ["N,h1,log_n_dec,total_lo,total_hi,"
             "total_lo_dec,total_hi_dec,lo_over_log_dec"]
    for n, curve, report in rows:
        lines.append(",".join([
            str(n), format_fraction(curve.length), _dec(log(n)),
            format_fraction(Fraction(report.total_lo)),
            format_fraction(Fraction(report.total_hi)),
            _dec(report.total_lo), _dec(report.total_hi),
            _dec(float(report.total_lo) / log(n))]))
    with open(cfg.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    ok = all(curve.length == 2 for _n, curve, _r in rows)
    summary = {"levels": levels, "out": cfg.out,
               "h1_all_two": ok,
               "totals_lo": [format_fraction(Fraction(r.total_lo))
                             for _n, _c, r in rows]}
    if cfg.p == 1:
        los = [r.total_lo for _n, _c, r in rows]
        increasing = all(a < b for a, b in zip(los, los[1:]))
        ratios = [float(lo) / log(n) for (n, _c, _r), lo in zip(rows, los)]
        band = max(ratios) / min(ratios) if ratios else 1.0
        summary["increasing"] = increasing
        summary["band"] = _dec(band)
        ok = ok and increasing and band <= 2.0
    _print(summary)
    return 0 if ok else 2


def cmd_construct(cfg: RunConfig) -> int:
    system = get_system(cfg.system)
    pts = _cloud_arg(system, cfg, cfg.depth)
    params = make_params(system, cfg.depth, cfg.epsilon, cfg.a_mult)
    result = build_curve(system, pts, params, threads=cfg.threads)
    curve_emit(result.curve, cfg.out_curve)
    report = _construct_report(system, cfg, params, result)
    with open(cfg.out_report, "w") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print({"length": report["length"], "checks": report["checks"],
            "containment": report["containment"]["passed"],
            "out_curve": cfg.out_curve, "out_report": cfg.out_report})
    passed = (report["containment"]["passed"]
              and all(report["checks"].values())
              and result.curve.connected)
    return 0 if passed else 2


def _construct_report(system, cfg, params, result) -> dict:
    rep = result.report
    runs = []
    for run in result.runs:
        stages = []
        for st in run.stages:
            tag_counts = {}
            for t in st.tags.values():
                tag_counts[t] = tag_counts.get(t, 0) + 1
            stages.append({"level": st.level, "edges": len(st.edges),
                           "tags": tag_counts,
                           "checks": dict(st.checks)})
        runs.append({
            "root_level": run.n0,
            "root_edge": run.root_edge,
            "large_sum": _frac_obj(run.large_sum),
            "curve_length": _frac_obj(run.gamma.length),
            "stages": stages,
            "budgets": run.ledger.stage_lines,
            "remainders": [
                {"level": r.level, "edge": r.edge,
                 "points": len(r.points.points),
                 "dist": _frac_obj(r.dist), "diam": _frac_obj(r.diam)}
                for r in run.remainders],
            "certificates": [
                {"name": c.name, "passed": c.passed,
                 "measured": (format_fraction(c.measured)
                              if c.measured is not None else None),
                 "measured_dec": (_dec(c.measured)
                                  if c.measured is not None else None),
                 "bound": (format_fraction(c.bound)
                           if c.bound is not None else None),
                 "note": c.note}
                for c in run.cert],
        })
    return {
        "system": system.name,
        "depth": params.depth,
        "epsilon": format_fraction(params.epsilon),
        "a_mult": params.a_mult,
        "seed": cfg.seed if cfg.gen is not None else None,
        "root_level": rep["root_level"],
        "length": _frac_obj(rep["length"]),
        "diam": _frac_obj(rep["diam"]),
        "large_sum": _frac_obj(rep["large_sum"]),
        "containment": {
            "passed": rep["containment"]["passed"],
            "max_dist": _frac_obj(rep["containment"]["max_dist"]),
            "bound": _frac_obj(rep["containment"]["bound"]),
        },
        "checks": rep["checks"],
        "joins": [format_fraction(j) for j in rep["joins"]],
        "residual_parts": rep["residual_parts"],
        "truncated_parts": rep["truncated_parts"],
        "scale_skip": rep["scale_skip"],
        "runs": runs,
    }


COMMANDS = {
    "build": cmd_build,
    "validate": cmd_validate,
    "beta": cmd_beta,
    "verify-sum": cmd_verify,
    "counterexample": cmd_counterexample,
    "construct": cmd_construct,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.command](cfg)
    except LaaksoTstError as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        witness = getattr(exc, "witness", None)
        if witness is not None:
            err["error"]["witness"] = repr(witness)
        _sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
