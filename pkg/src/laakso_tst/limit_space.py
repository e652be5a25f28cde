"""Finite-depth points of the limit space, certified distances, nets,
and the two multiresolution families (metric balls and combinatorial
cubes) that the sum verifier ranges over.

A limit point is held as its whole coordinate thread down to a working
depth.  Distances between depth-N points are certified intervals: the
level-N distance is a lower bound for the limit distance and overshoots
it by at most c_eta * m^-N.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .errors import InputError
from .fracs import format_fraction
from .inverse_system import InverseSystem
from .metric_graph import GraphPoint, MetricGraph, SegmentSet, _capped_hops

IN = "in"
OUT = "out"
UNCERTAIN = "boundary-uncertain"


class LimitPoint:
    """A projection-consistent thread of graph points, levels 0..depth."""

    __slots__ = ("system", "depth", "coords", "_key")

    def __init__(self, system: InverseSystem, coords: Sequence[GraphPoint],
                 check: bool = True):
        self.system = system
        self.coords = tuple(coords)
        self.depth = len(self.coords) - 1
        if self.depth < 0:
            raise InputError("a limit point needs at least level 0")
        if check:
            for i in range(self.depth):
                want = system.project_point(i + 1, i, self.coords[i + 1])
                gi = system.level(i)
                if gi.canonical_key(want) != gi.canonical_key(self.coords[i]):
                    raise InputError(f"thread breaks between levels {i + 1} "
                                     f"and {i}")
        gN = system.level(self.depth)
        self._key = (self.depth, gN.canonical_key(self.coords[self.depth]))

    @classmethod
    def from_point(cls, system: InverseSystem, level: int, p: GraphPoint,
                   depth: int) -> "LimitPoint":
        """Thread through p, deepened by least-id lifts to `depth`."""
        if depth < level:
            raise InputError("depth must be >= the anchor level")
        deepest = system.lift_point(level, depth, p)
        coords = [deepest]
        for i in range(depth, 0, -1):
            coords.append(system.project_point(i, i - 1, coords[-1]))
        coords.reverse()
        return cls(system, coords, check=False)

    def at(self, level: int) -> GraphPoint:
        if not (0 <= level <= self.depth):
            raise InputError(f"level {level} outside thread 0..{self.depth}")
        return self.coords[level]

    def pi0(self) -> Fraction:
        return self.system.level(0).pi0(self.coords[0])

    def truncate(self, depth: int) -> "LimitPoint":
        if depth >= self.depth:
            return self
        return LimitPoint(self.system, self.coords[:depth + 1], check=False)

    def deepen(self, depth: int) -> "LimitPoint":
        if depth <= self.depth:
            return self.truncate(depth)
        return LimitPoint.from_point(self.system, self.depth,
                                     self.coords[self.depth], depth)

    def key(self):
        return self._key

    def __eq__(self, other):
        return (isinstance(other, LimitPoint) and self._key == other._key
                and self.system is other.system)

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        p = self.coords[self.depth]
        return f"LimitPoint(depth={self.depth}, edge={p.edge}, off={p.offset})"


@dataclass(frozen=True)
class DistanceInterval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, "lo", Fraction(self.lo))
        object.__setattr__(self, "hi", Fraction(self.hi))
        if self.lo > self.hi:
            raise InputError("interval lo exceeds hi")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo


def limit_distance(x: LimitPoint, y: LimitPoint) -> DistanceInterval:
    """Certified interval around the limit distance of two threads."""
    if x.system is not y.system:
        raise InputError("points live in different systems")
    n = min(x.depth, y.depth)
    g = x.system.level(n)
    lo = g.distance(x.at(n), y.at(n))
    return DistanceInterval(lo, lo + x.system.c_eta() * g.scale)


# -- nets ----------------------------------------------------------------------


def net(sys: InverseSystem, n: int, depth: int) -> List[LimitPoint]:
    """One thread per level-n edge midpoint, least-id lifts."""
    if depth < n:
        raise InputError("depth must be >= n")
    g = sys.level(n)
    half = g.scale / 2
    return [LimitPoint.from_point(sys, n, GraphPoint(eid, half), depth)
            for eid in range(g.num_edges)]


def net_report(sys: InverseSystem, n: int, depth: int) -> dict:
    """Measured separation (certified lower bounds) and density of the net."""
    pts = net(sys, n, depth)
    sep = None
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            lo = limit_distance(pts[i], pts[j]).lo
            if sep is None or lo < sep:
                sep = lo
    gN = sys.level(depth)
    density = Fraction(0)
    for v in range(gN.num_vertices):
        x = LimitPoint.from_point(sys, depth, gN.vertex_point(v), depth)
        best = min(limit_distance(x, p).hi for p in pts)
        if best > density:
            density = best
    return {"n": n, "depth": depth, "count": len(pts),
            "separation_lo": sep, "density_hi_on_vertices": density}


# -- ball and cube specs ---------------------------------------------------------


@dataclass(frozen=True)
class BallSpec:
    level: int
    edge: int
    center: LimitPoint
    a_mult: int

    @property
    def radius(self) -> Fraction:
        return self.a_mult * self.center.system.level(self.level).scale

    @property
    def diam_norm(self) -> Fraction:
        """Normalizing diameter used in sums: twice the radius."""
        return 2 * self.radius


@dataclass(frozen=True)
class CubeSpec:
    """All limit points whose level-n projection lies within two edge
    lengths of the marked edge.  The set is stored explicitly as full
    edges plus possibly isolated vertices of the level-n graph."""

    level: int
    edge: int
    a_mult: int
    members: SegmentSet
    full_edges: FrozenSet[int]
    isolated_vertices: FrozenSet[int]
    merged_edges: Tuple[int, ...]

    @property
    def diam_norm(self) -> Fraction:
        sys_scale = self.members.graph.scale
        return 2 * self.a_mult * sys_scale

    def exact_diameter(self) -> Fraction:
        return self.members.diameter(cap_hops=6)

    def key(self):
        return self.members.key()

    def contains_level_point(self, p: GraphPoint) -> bool:
        return self.members.contains_point(p)


def cube_structure(g: MetricGraph, eid: int) -> Tuple[FrozenSet[int],
                                                      FrozenSet[int]]:
    """Full edges and isolated vertices of the two-edge neighborhood.

    A whole edge (u, v) is inside iff D_u + D_v <= 3 s, where D_w is the
    hop distance from w to the marked edge's endpoint set times s; the
    remaining boundary consists of single vertices at D exactly 2 s whose
    every neighbor is at least as far.
    """
    a, b = g.edges[eid]
    ha = _capped_hops(g, a, 4)
    hb = _capped_hops(g, b, 4)

    def hops_to_edge(v):
        da = ha.get(v)
        db = hb.get(v)
        cands = [d for d in (da, db) if d is not None]
        return min(cands) if cands else None

    near = set(ha)
    near.update(hb)
    cand_edges = set()
    for w in near:
        cand_edges.update(g.adj[w])
    full = set()
    candidates = set()
    for f in cand_edges:
        u, v = g.edges[f]
        du = hops_to_edge(u)
        dv = hops_to_edge(v)
        if du is not None and dv is not None and du + dv <= 3:
            full.add(f)
        else:
            for w, dw in ((u, du), (v, dv)):
                if dw is not None and dw == 2:
                    candidates.add(w)
    on_full = set()
    for f in full:
        on_full.update(g.edges[f])
    isolated = frozenset(candidates - on_full)
    return frozenset(full), isolated


def make_cube(sys: InverseSystem, n: int, eid: int, a_mult: int) -> CubeSpec:
    g = sys.level(n)
    full, isolated = cube_structure(g, eid)
    raw = [(f, Fraction(0), g.scale) for f in sorted(full)]
    for v in sorted(isolated):
        inc = min(g.adj[v])
        off = Fraction(0) if g.edges[inc][0] == v else g.scale
        raw.append((inc, off, off))
    members = SegmentSet.merged(g, raw)
    return CubeSpec(level=n, edge=eid, a_mult=a_mult, members=members,
                    full_edges=full, isolated_vertices=isolated,
                    merged_edges=(eid,))


def ball_family(sys: InverseSystem, max_level: int, depth: int,
                a_mult: Optional[int] = None) -> List[BallSpec]:
    if depth < max_level:
        raise InputError("depth must be >= max_level")
    A = a_mult if a_mult is not None else sys.default_ball_multiple()
    out = []
    for n in range(max_level + 1):
        g = sys.level(n)
        half = g.scale / 2
        for eid in range(g.num_edges):
            center = LimitPoint.from_point(sys, n, GraphPoint(eid, half),
                                           depth)
            out.append(BallSpec(level=n, edge=eid, center=center, a_mult=A))
    return out


def cube_family(sys: InverseSystem, max_level: int,
                a_mult: Optional[int] = None) -> List[CubeSpec]:
    """One cube per level-n edge, merged whenever the point sets agree."""
    A = a_mult if a_mult is not None else sys.default_ball_multiple()
    out = []
    for n in range(max_level + 1):
        g = sys.level(n)
        seen: Dict[tuple, int] = {}
        level_cubes: List[CubeSpec] = []
        for eid in range(g.num_edges):
            cube = make_cube(sys, n, eid, A)
            k = cube.key()
            if k in seen:
                prev = level_cubes[seen[k]]
                level_cubes[seen[k]] = CubeSpec(
                    level=prev.level, edge=prev.edge, a_mult=prev.a_mult,
                    members=prev.members, full_edges=prev.full_edges,
                    isolated_vertices=prev.isolated_vertices,
                    merged_edges=prev.merged_edges + (eid,))
            else:
                seen[k] = len(level_cubes)
                level_cubes.append(cube)
        out.extend(level_cubes)
    return out


# -- membership ------------------------------------------------------------------


def membership(x: LimitPoint, spec) -> str:
    if isinstance(spec, BallSpec):
        if x.depth < spec.level:
            raise InputError("point depth is above the ball's level")
        ival = limit_distance(x, spec.center)
        if ival.hi <= spec.radius:
            return IN
        if ival.lo > spec.radius:
            return OUT
        return UNCERTAIN
    if isinstance(spec, CubeSpec):
        if x.depth < spec.level:
            raise InputError("point depth is above the cube's level")
        p = x.at(spec.level)
        return IN if spec.contains_level_point(p) else OUT
    raise InputError(f"unsupported spec type {type(spec).__name__}")


# -- CSV interface ----------------------------------------------------------------


def write_ball_csv(specs: Sequence[BallSpec], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "edge_id", "diam", "A"])
        for b in specs:
            w.writerow([b.level, b.edge, format_fraction(b.diam_norm),
                        b.a_mult])


def write_cube_csv(specs: Sequence[CubeSpec], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "edge_id", "diam", "A"])
        for q in specs:
            w.writerow([q.level, q.edge, format_fraction(q.exact_diameter()),
                        q.a_mult])
