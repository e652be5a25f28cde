"""Monotone geodesics and flatness numbers for finite point clouds.

A monotone geodesic at level n is a path holding one edge per base
column, consecutive edges sharing the junction vertex; the base
coordinate restricted to it is a bijection onto [0, 1], which makes the
path a geodesic of length 1.

beta of a region measures how far the region's points stick out from the
best monotone geodesic, normalized by the region's nominal diameter.
Two engines compute it: `beta_exact` brute-forces every geodesic with
true point-to-path distances, and `beta_dp` runs a column dynamic
program on the vertical-distance surrogate (distance to the path point
with the same base coordinate), which is sandwiched between one and two
times the true distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .errors import InputError, ResourceError
from .fracs import format_fraction
from .inverse_system import InverseSystem
from .limit_space import IN, OUT, BallSpec, CubeSpec, LimitPoint, membership
from .metric_graph import GraphPoint, MetricGraph, SegmentSet, path_vertices

MODE_EXACT = "exact"
MODE_DP = "vertical-DP"


@dataclass(frozen=True)
class MonotoneGeodesic:
    """One edge per base column, left to right."""

    graph: MetricGraph
    columns: Tuple[int, ...]

    def __post_init__(self):
        g = self.graph
        object.__setattr__(self, "columns", tuple(self.columns))
        want = g.m ** g.level
        if len(self.columns) != want:
            raise InputError(f"need {want} column edges, got "
                             f"{len(self.columns)}")
        prev_hi = None
        for k, eid in enumerate(self.columns):
            if g.columns[eid] != k:
                raise InputError(f"edge {eid} is not in column {k}")
            a, b = g.edges[eid]
            if prev_hi is not None and a != prev_hi:
                raise InputError(f"columns {k - 1} and {k} do not share "
                                 "their junction vertex")
            prev_hi = b

    @property
    def level(self) -> int:
        return self.graph.level

    def point_at(self, q: Fraction) -> GraphPoint:
        """The unique point of the geodesic with base coordinate q."""
        q = Fraction(q)
        if not (0 <= q <= 1):
            raise InputError("base coordinate outside [0,1]")
        s = self.graph.scale
        col = min(int(q / s), len(self.columns) - 1)
        return GraphPoint(self.columns[col], q - col * s)

    def as_segments(self) -> SegmentSet:
        return SegmentSet.full_edges(self.graph, self.columns)


@dataclass(frozen=True)
class MonotoneSegment:
    """A consecutive run of column edges, or a single anchor point."""

    graph: MetricGraph
    edges: Tuple[int, ...]
    anchor: Optional[GraphPoint] = None

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        g = self.graph
        if not self.edges:
            if self.anchor is None:
                raise InputError("empty segment needs an anchor point")
            g._check_point(self.anchor)
            return
        cols = [g.columns[eid] for eid in self.edges]
        for k in range(1, len(cols)):
            if cols[k] != cols[k - 1] + 1:
                raise InputError("segment edges must cover consecutive "
                                 "columns")
            if g.edges[self.edges[k]][0] != g.edges[self.edges[k - 1]][1]:
                raise InputError("segment edges do not share junctions")


def is_monotone(g: MetricGraph, path: Sequence[int]) -> bool:
    """True iff the base coordinate is injective along the path."""
    verts = path_vertices(g, path)
    direction = 0
    for k, eid in enumerate(path):
        a, b = g.edges[eid]
        step = 1 if verts[k] == a else -1
        if direction == 0:
            direction = step
        elif step != direction:
            return False
    return True


def enumerate_monotone(g: MetricGraph, limit: int) -> List[MonotoneGeodesic]:
    """All monotone geodesics in canonical (lexicographic) column order."""
    ncols = g.m ** g.level
    out: List[MonotoneGeodesic] = []
    stack: List[int] = []

    def walk(col: int, cur_vertex: Optional[int]):
        if col == ncols:
            out.append(MonotoneGeodesic(g, tuple(stack)))
            if len(out) > limit:
                raise ResourceError(
                    f"more than {limit} monotone geodesics at level "
                    f"{g.level}; use the DP instead")
            return
        for eid in sorted(g.column_edges(col)):
            a, b = g.edges[eid]
            if cur_vertex is not None and a != cur_vertex:
                continue
            stack.append(eid)
            walk(col + 1, b)
            stack.pop()

    walk(0, None)
    return out


def count_monotone(g: MetricGraph) -> int:
    """Number of monotone geodesics, by column DP (no enumeration)."""
    counts = {}
    for eid in sorted(g.column_edges(0)):
        counts[g.edges[eid][1]] = counts.get(g.edges[eid][1], 0) + 1
    ncols = g.m ** g.level
    for col in range(1, ncols):
        nxt = {}
        for eid in g.column_edges(col):
            a, b = g.edges[eid]
            if a in counts:
                nxt[b] = nxt.get(b, 0) + counts[a]
        counts = nxt
    return sum(counts.values())


def extend_segment(seg: MonotoneSegment) -> MonotoneGeodesic:
    """Complete a segment to a full geodesic, least edge ids outward."""
    g = seg.graph
    ncols = g.m ** g.level
    if seg.edges:
        edges = list(seg.edges)
        left_col = g.columns[edges[0]]
        left_vertex = g.edges[edges[0]][0]
        right_col = g.columns[edges[-1]]
        right_vertex = g.edges[edges[-1]][1]
    else:
        key = g.canonical_key(seg.anchor)
        if key[0] == "v":
            v = key[1]
            q = g.pi0v[v]
            col = int(q / g.scale)  # column to the right of the vertex
            edges = []
            left_col, right_col = col, col - 1
            left_vertex = right_vertex = v
        else:
            eid = seg.anchor.edge
            edges = [eid]
            left_col = right_col = g.columns[eid]
            left_vertex, right_vertex = g.edges[eid]
    for col in range(left_col - 1, -1, -1):
        got = None
        for eid in sorted(g.column_edges(col)):
            if g.edges[eid][1] == left_vertex:
                got = eid
                break
        if got is None:
            raise InputError(f"no monotone continuation left of column "
                             f"{col + 1}")
        edges.insert(0, got)
        left_vertex = g.edges[got][0]
    for col in range(right_col + 1, ncols):
        got = None
        for eid in sorted(g.column_edges(col)):
            if g.edges[eid][0] == right_vertex:
                got = eid
                break
        if got is None:
            raise InputError(f"no monotone continuation right of column "
                             f"{col - 1}")
        edges.append(got)
        right_vertex = g.edges[got][1]
    return MonotoneGeodesic(g, tuple(edges))


def least_geodesic(g: MetricGraph) -> MonotoneGeodesic:
    """The geodesic picking the least edge id at every junction."""
    e0 = min(g.column_edges(0))
    return extend_segment(MonotoneSegment(g, (e0,)))


def vertical_distance(x: GraphPoint, L: MonotoneGeodesic) -> Fraction:
    """Distance from x to the point of L with the same base coordinate."""
    g = L.graph
    return g.distance(x, L.point_at(g.pi0(x)))


# -- point clouds and membership splitting ---------------------------------------


@dataclass(frozen=True)
class PointCloud:
    points: Tuple[LimitPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        depths = {p.depth for p in self.points}
        if len(depths) > 1:
            raise InputError("cloud points must share one depth")

    @property
    def depth(self) -> int:
        if not self.points:
            raise InputError("empty cloud has no depth")
        return self.points[0].depth

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_graph_points(cls, sys: InverseSystem, level: int,
                          pts: Sequence[GraphPoint],
                          depth: Optional[int] = None) -> "PointCloud":
        d = level if depth is None else depth
        return cls(tuple(LimitPoint.from_point(sys, level, p, d)
                         for p in pts))


def split_membership(E: PointCloud, region) -> Tuple[List[LimitPoint],
                                                     List[LimitPoint]]:
    """(certainly inside, possibly inside) sublists of the cloud."""
    certain, possible = [], []
    for x in E.points:
        verdict = membership(x, region)
        if verdict == IN:
            certain.append(x)
            possible.append(x)
        elif verdict != OUT:
            possible.append(x)
    return certain, possible


def region_pi0_range(region) -> Tuple[Fraction, Fraction]:
    if isinstance(region, BallSpec):
        c = region.center.pi0()
        return (max(Fraction(0), c - region.radius),
                min(Fraction(1), c + region.radius))
    if isinstance(region, CubeSpec):
        g = region.members.graph
        los, his = [], []
        for eid, lo, hi in region.members.iter_segments():
            base = g.pi0v[g.edges[eid][0]]
            los.append(base + lo)
            his.append(base + hi)
        return min(los), max(his)
    raise InputError(f"unsupported region type {type(region).__name__}")


# -- beta ------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaResult:
    region_level: int
    region_edge: int
    beta_lo: Fraction
    beta_hi: Fraction
    diam: Fraction
    mode: str
    witness: MonotoneGeodesic
    witness_value: Fraction    # unnormalized max surrogate distance
    margin: Fraction           # truncation certificate c_eta * m^-work_level
    n_certain: int
    n_possible: int


def _check_beta_inputs(sys: InverseSystem, E: PointCloud, region):
    if E.points and E.depth < region.level:
        raise InputError("cloud depth is above the region level")


def beta_exact(sys: InverseSystem, E: PointCloud, region,
               enum_limit: int = 200_000) -> BetaResult:
    """Min-max of true point-to-geodesic distance over all geodesics.

    beta_lo uses only points certainly in the region, beta_hi all points
    possibly in it; for cubes the two agree.
    """
    _check_beta_inputs(sys, E, region)
    w = E.depth if E.points else max(region.level, 0)
    g = sys.level(w)
    certain, possible = split_membership(E, region) if E.points else ([], [])
    diam = region.diam_norm
    margin = sys.c_eta() * g.scale
    if not possible:
        return BetaResult(region.level, region.edge, Fraction(0), Fraction(0),
                          diam, MODE_EXACT, least_geodesic(g), Fraction(0),
                          margin, 0, 0)
    geodesics = enumerate_monotone(g, enum_limit)
    best_cert = None
    best_poss = None
    witness = None
    for L in geodesics:
        segs = L.as_segments()
        sup_poss = max(g.point_to_segments(x.at(w), segs) for x in possible)
        if best_poss is None or sup_poss < best_poss:
            best_poss = sup_poss
            witness = L
        if certain:
            sup_cert = max(g.point_to_segments(x.at(w), segs)
                           for x in certain)
            if best_cert is None or sup_cert < best_cert:
                best_cert = sup_cert
    if best_cert is None:
        best_cert = Fraction(0)
    return BetaResult(region.level, region.edge,
                      best_cert / diam, best_poss / diam, diam, MODE_EXACT,
                      witness, best_poss, margin,
                      len(certain), len(possible))


def _column_of(q: Fraction, s: Fraction, c_lo: int, c_hi: int) -> int:
    col = int(q / s)
    return min(max(col, c_lo), c_hi)


def _run_column_dp(g: MetricGraph, cols: range,
                   cost: dict) -> Tuple[Fraction, List[int]]:
    """Minimax path through one edge per column; least-id tie-break.

    cost maps (col, edge) to the running-max contribution of that edge.
    Returns (optimal value, edge path)."""
    first = cols[0]
    value = {eid: cost.get((first, eid), Fraction(0))
             for eid in sorted(g.column_edges(first))}
    back: List[dict] = [{eid: None for eid in value}]
    for col in cols[1:]:
        nvalue = {}
        nback = {}
        for eid in sorted(g.column_edges(col)):
            a, _b = g.edges[eid]
            best = None
            best_p = None
            for pid in sorted(g.column_edges(col - 1)):
                if g.edges[pid][1] != a or pid not in value:
                    continue
                if best is None or value[pid] < best:
                    best = value[pid]
                    best_p = pid
            if best is None:
                continue
            nvalue[eid] = max(best, cost.get((col, eid), Fraction(0)))
            nback[eid] = best_p
        value, back = nvalue, back + [nback]
        if not value:
            raise InputError("column DP ran out of continuations")
    last = min(value, key=lambda e: (value[e], e))
    path = [last]
    for k in range(len(back) - 1, 0, -1):
        path.append(back[k][path[-1]])
    path.reverse()
    return value[last], path


def beta_dp(sys: InverseSystem, E: PointCloud, region,
            work_level: int) -> BetaResult:
    """Column DP on the vertical-distance surrogate.

    The optimum over window paths of the max vertical distance to the
    possibly-in points is beta_hi (its witness realizes it exactly); half
    the certain-points optimum is beta_lo by the factor-2 sandwich.
    """
    _check_beta_inputs(sys, E, region)
    if work_level < region.level:
        raise InputError("work level above the region level")
    g = sys.level(work_level)
    s = g.scale
    ncols = g.m ** work_level
    certain, possible = split_membership(E, region) if E.points else ([], [])
    diam = region.diam_norm
    margin = sys.c_eta() * s
    lo_q, hi_q = region_pi0_range(region)
    c_lo = max(0, int(lo_q / s))
    c_hi = min(ncols - 1, int(hi_q / s))
    cols = range(c_lo, c_hi + 1)
    if E.points and E.depth < work_level:
        raise InputError("cloud depth is above the work level")

    def costs(pts) -> dict:
        table: dict = {}
        for x in pts:
            p = x.at(work_level)
            q = g.pi0(p)
            col = _column_of(q, s, c_lo, c_hi)
            for eid in g.column_edges(col):
                lp = GraphPoint(eid, q - col * s)
                d = g.distance(p, lp)
                key = (col, eid)
                if key not in table or d > table[key]:
                    table[key] = d
        return table

    if not possible:
        witness = least_geodesic(g)
        return BetaResult(region.level, region.edge, Fraction(0), Fraction(0),
                          diam, MODE_DP, witness, Fraction(0), margin, 0, 0)
    opt_poss, path = _run_column_dp(g, cols, costs(possible))
    witness = extend_segment(MonotoneSegment(g, tuple(path)))
    if certain:
        opt_cert, _ = _run_column_dp(g, cols, costs(certain))
    else:
        opt_cert = Fraction(0)
    return BetaResult(region.level, region.edge,
                      opt_cert / 2 / diam, opt_poss / diam, diam, MODE_DP,
                      witness, opt_poss, margin, len(certain), len(possible))


# -- CSV interface -----------------------------------------------------------------


def write_beta_csv(results: Sequence[BetaResult], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "edge_id", "beta_lo", "beta_hi", "diam", "mode"])
        for r in results:
            w.writerow([r.region_level, r.region_edge,
                        format_fraction(r.beta_lo), format_fraction(r.beta_hi),
                        format_fraction(r.diam), r.mode])
