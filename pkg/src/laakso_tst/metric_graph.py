"""One graph level of a multiresolution tower, with its exact path metric.

A `MetricGraph` is a finite graph whose edges all carry the same length
`scale = m**-level`, together with a base coordinate `pi0` per vertex.  The
base coordinate of the two endpoints of a well-formed edge differs by
exactly `scale`, so `pi0` extends to an isometry on every edge.  All
arithmetic is `fractions.Fraction`; there is no floating point anywhere in
the metric core.

Points are `(edge, offset)` pairs (`GraphPoint`).  Subsets are unions of
edge sub-segments (`SegmentSet`).  Distances, metric balls, lengths and
diameters of such subsets are all exact.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import InputError, ParseError
from .fracs import format_fraction, parse_fraction


@dataclass(frozen=True)
class GraphPoint:
    """A point on an edge: rational offset from the low-pi0 endpoint."""

    edge: int
    offset: Fraction

    def __post_init__(self):
        object.__setattr__(self, "offset", Fraction(self.offset))


class MetricGraph:
    """Immutable graph level; all queries are read-only.

    vertices are integers 0..nv-1 with base coordinates `pi0v[i]`;
    edges are (v0, v1) pairs oriented so pi0v[v0] <= pi0v[v1].
    """

    def __init__(self, level: int, m: int, pi0v: Sequence[Fraction],
                 edges: Sequence[tuple], check: bool = True):
        self.level = int(level)
        self.m = int(m)
        if self.level < 0 or self.m < 2:
            raise InputError("level must be >= 0 and m >= 2")
        self.scale = Fraction(1, self.m ** self.level)
        self.pi0v = tuple(Fraction(x) for x in pi0v)
        nv = len(self.pi0v)
        oriented = []
        for (a, b) in edges:
            a = int(a)
            b = int(b)
            if not (0 <= a < nv and 0 <= b < nv):
                raise InputError(f"edge endpoint out of range: ({a},{b})")
            if self.pi0v[a] > self.pi0v[b]:
                a, b = b, a
            oriented.append((a, b))
        self.edges = tuple(oriented)
        if check:
            for q in self.pi0v:
                if q < 0 or q > 1:
                    raise InputError(f"pi0 coordinate {q} outside [0,1]")
        self.adj = [[] for _ in range(nv)]  # vertex -> incident edge ids
        for eid, (a, b) in enumerate(self.edges):
            self.adj[a].append(eid)
            self.adj[b].append(eid)
        # column index of an edge: which width-`scale` slab of [0,1] it spans
        self.columns = tuple(
            int(self.pi0v[a] / self.scale) for (a, b) in self.edges)
        self._column_edges = {}
        for eid, c in enumerate(self.columns):
            self._column_edges.setdefault(c, []).append(eid)
        self._hops_cache = {}

    # -- basic structure ---------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.pi0v)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def column_edges(self, col: int) -> list:
        return self._column_edges.get(col, [])

    def other_end(self, eid: int, v: int) -> int:
        a, b = self.edges[eid]
        return b if v == a else a

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def is_connected(self) -> bool:
        if self.num_vertices == 0:
            return True
        seen = [False] * self.num_vertices
        seen[0] = True
        queue = deque([0])
        count = 1
        while queue:
            v = queue.popleft()
            for eid in self.adj[v]:
                w = self.other_end(eid, v)
                if not seen[w]:
                    seen[w] = True
                    count += 1
                    queue.append(w)
        return count == self.num_vertices

    # -- points ------------------------------------------------------------

    def point(self, edge: int, offset) -> GraphPoint:
        """Validated point constructor."""
        if not (0 <= edge < self.num_edges):
            raise InputError(f"edge id {edge} out of range")
        off = Fraction(offset)
        if off < 0 or off > self.scale:
            raise InputError(f"offset {off} outside [0, {self.scale}]")
        return GraphPoint(edge, off)

    def vertex_point(self, v: int) -> GraphPoint:
        """Some representation of vertex v as a GraphPoint."""
        if not self.adj[v]:
            raise InputError(f"vertex {v} is isolated")
        eid = self.adj[v][0]
        a, b = self.edges[eid]
        return GraphPoint(eid, Fraction(0) if v == a else self.scale)

    def canonical_key(self, p: GraphPoint):
        """Decidable point identity: vertex id, or (edge, interior offset)."""
        self._check_point(p)
        a, b = self.edges[p.edge]
        if p.offset == 0:
            return ("v", a)
        if p.offset == self.scale:
            return ("v", b)
        return ("e", p.edge, p.offset)

    def points_equal(self, p: GraphPoint, q: GraphPoint) -> bool:
        return self.canonical_key(p) == self.canonical_key(q)

    def pi0(self, p: GraphPoint) -> Fraction:
        """Base coordinate of a point; isometric along each edge."""
        self._check_point(p)
        a, _b = self.edges[p.edge]
        return self.pi0v[a] + p.offset

    def _check_point(self, p: GraphPoint):
        if not (0 <= p.edge < self.num_edges):
            raise InputError(f"edge id {p.edge} out of range")
        if p.offset < 0 or p.offset > self.scale:
            raise InputError(f"offset {p.offset} outside edge of length {self.scale}")

    # -- metric ------------------------------------------------------------

    def vertex_hops(self, src: int):
        """Hop counts from src to every vertex (edges are unit hops)."""
        cached = self._hops_cache.get(src)
        if cached is not None:
            return cached
        dist = [-1] * self.num_vertices
        dist[src] = 0
        queue = deque([src])
        while queue:
            v = queue.popleft()
            d = dist[v] + 1
            for eid in self.adj[v]:
                w = self.other_end(eid, v)
                if dist[w] < 0:
                    dist[w] = d
                    queue.append(w)
        self._hops_cache[src] = dist
        return dist

    def vertex_distance(self, u: int, v: int) -> Fraction:
        h = self.vertex_hops(u)[v]
        if h < 0:
            raise InputError(f"vertices {u},{v} are disconnected")
        return h * self.scale

    def point_vertex_dists(self, p: GraphPoint) -> list:
        """Distance from p to every vertex, as a list indexed by vertex."""
        self._check_point(p)
        a, b = self.edges[p.edge]
        ha = self.vertex_hops(a)
        hb = self.vertex_hops(b)
        s = self.scale
        lo, hi = p.offset, s - p.offset
        out = []
        for v in range(self.num_vertices):
            da = ha[v] * s + lo if ha[v] >= 0 else None
            db = hb[v] * s + hi if hb[v] >= 0 else None
            if da is None and db is None:
                out.append(None)
            elif da is None:
                out.append(db)
            elif db is None:
                out.append(da)
            else:
                out.append(min(da, db))
        return out

    def distance(self, p: GraphPoint, q: GraphPoint) -> Fraction:
        """Exact shortest-path distance between two points."""
        self._check_point(p)
        self._check_point(q)
        s = self.scale
        best = None
        if p.edge == q.edge:
            best = abs(p.offset - q.offset)
        a0, a1 = self.edges[p.edge]
        b0, b1 = self.edges[q.edge]
        exits_p = ((a0, p.offset), (a1, s - p.offset))
        exits_q = ((b0, q.offset), (b1, s - q.offset))
        for u, cu in exits_p:
            hops = self.vertex_hops(u)
            for v, cv in exits_q:
                if hops[v] < 0:
                    continue
                cand = cu + hops[v] * s + cv
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise InputError("points lie in different components")
        return best

    # -- subsets -----------------------------------------------------------

    def ball_points(self, center: GraphPoint, r) -> "SegmentSet":
        """The exact closed metric ball {x : d(x, center) <= r}."""
        r = Fraction(r)
        if r < 0:
            raise InputError("radius must be >= 0")
        self._check_point(center)
        s = self.scale
        dv = self.point_vertex_dists(center)
        raw = []
        for eid, (a, b) in enumerate(self.edges):
            ivals = []
            da, db = dv[a], dv[b]
            if da is not None and r >= da:
                ivals.append((Fraction(0), min(s, r - da)))
            if db is not None and r >= db:
                ivals.append((max(Fraction(0), s - (r - db)), s))
            if eid == center.edge:
                ivals.append((max(Fraction(0), center.offset - r),
                              min(s, center.offset + r)))
            for lo, hi in ivals:
                if lo <= hi:
                    raw.append((eid, lo, hi))
        return SegmentSet.merged(self, raw)

    def h1_length(self, subset) -> Fraction:
        """Total length of a union of edge segments.

        Accepts a SegmentSet or raw (edge, lo, hi) triples.  Raw input with
        overlapping (positive-measure) segments on one edge is rejected:
        merge first.
        """
        if isinstance(subset, SegmentSet):
            return subset.total_length()
        by_edge = {}
        total = Fraction(0)
        for (eid, lo, hi) in subset:
            lo, hi = Fraction(lo), Fraction(hi)
            if not (0 <= eid < self.num_edges):
                raise InputError(f"edge id {eid} out of range")
            if lo > hi or lo < 0 or hi > self.scale:
                raise InputError(f"bad segment ({eid},{lo},{hi})")
            for (plo, phi) in by_edge.get(eid, ()):
                if max(plo, lo) < min(phi, hi):
                    raise InputError(
                        f"unmerged overlap on edge {eid}: "
                        f"[{plo},{phi}] vs [{lo},{hi}]")
            by_edge.setdefault(eid, []).append((lo, hi))
            total += hi - lo
        return total

    def point_to_segments(self, p: GraphPoint, segs: "SegmentSet") -> Fraction:
        """Distance from a point to a nonempty SegmentSet."""
        best = None
        s = self.scale
        dv = self.point_vertex_dists(p)
        for eid, lo, hi in segs.iter_segments():
            a, b = self.edges[eid]
            cands = []
            if eid == p.edge:
                if lo <= p.offset <= hi:
                    return Fraction(0)
                cands.append(min(abs(p.offset - lo), abs(p.offset - hi)))
            if dv[a] is not None:
                cands.append(dv[a] + lo)
            if dv[b] is not None:
                cands.append(dv[b] + (s - hi))
            for c in cands:
                if best is None or c < best:
                    best = c
        if best is None:
            raise InputError("empty or unreachable segment set")
        return best

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "m": self.m,
            "vertices": [
                {"id": i, "pi0": format_fraction(q)}
                for i, q in enumerate(self.pi0v)
            ],
            "edges": [
                {"id": i, "v0": a, "v1": b}
                for i, (a, b) in enumerate(self.edges)
            ],
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MetricGraph":
        try:
            level = int(obj["level"])
            m = int(obj["m"])
            vts = obj["vertices"]
            eds = obj["edges"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed graph object: {exc}") from None
        pi0v = [None] * len(vts)
        for v in vts:
            i = int(v["id"])
            if not (0 <= i < len(vts)) or pi0v[i] is not None:
                raise ParseError(f"bad or duplicate vertex id {i}")
            pi0v[i] = parse_fraction(v["pi0"])
        pairs = [None] * len(eds)
        for e in eds:
            i = int(e["id"])
            if not (0 <= i < len(eds)) or pairs[i] is not None:
                raise ParseError(f"bad or duplicate edge id {i}")
            pairs[i] = (int(e["v0"]), int(e["v1"]))
        return cls(level, m, pi0v, pairs)

    @classmethod
    def load(cls, path) -> "MetricGraph":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read graph file {path}: {exc}") from None
        return cls.from_json_dict(obj)


class SegmentSet:
    """Canonical union of edge sub-segments of one MetricGraph.

    Internally a dict edge -> sorted tuple of disjoint (lo, hi) intervals;
    touching intervals are merged, degenerate (lo == hi) point segments are
    kept when isolated.
    """

    def __init__(self, graph: MetricGraph, by_edge: dict):
        self.graph = graph
        self.by_edge = by_edge

    @classmethod
    def empty(cls, graph: MetricGraph) -> "SegmentSet":
        return cls(graph, {})

    @classmethod
    def merged(cls, graph: MetricGraph, raw: Iterable[tuple]) -> "SegmentSet":
        acc = {}
        for (eid, lo, hi) in raw:
            lo, hi = Fraction(lo), Fraction(hi)
            if lo > hi:
                raise InputError(f"segment with lo > hi on edge {eid}")
            if lo < 0 or hi > graph.scale:
                raise InputError(f"segment ({eid},{lo},{hi}) outside edge")
            acc.setdefault(eid, []).append((lo, hi))
        by_edge = {}
        for eid, ivals in acc.items():
            ivals.sort()
            merged = [list(ivals[0])]
            for lo, hi in ivals[1:]:
                if lo <= merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], hi)
                else:
                    merged.append([lo, hi])
            by_edge[eid] = tuple((lo, hi) for lo, hi in merged)
        return cls(graph, by_edge)

    @classmethod
    def full_edges(cls, graph: MetricGraph, eids: Iterable[int]) -> "SegmentSet":
        s = graph.scale
        return cls.merged(graph, [(e, Fraction(0), s) for e in set(eids)])

    def union(self, other: "SegmentSet") -> "SegmentSet":
        raw = list(self.iter_segments()) + list(other.iter_segments())
        return SegmentSet.merged(self.graph, raw)

    def iter_segments(self):
        for eid in sorted(self.by_edge):
            for (lo, hi) in self.by_edge[eid]:
                yield (eid, lo, hi)

    def is_empty(self) -> bool:
        return not self.by_edge

    def total_length(self) -> Fraction:
        return sum((hi - lo for _, lo, hi in self.iter_segments()),
                   Fraction(0))

    def contains_point(self, p: GraphPoint) -> bool:
        key = self.graph.canonical_key(p)
        if key[0] == "e":
            for lo, hi in self.by_edge.get(p.edge, ()):
                if lo <= p.offset <= hi:
                    return True
            return False
        v = key[1]
        for eid in self.graph.adj[v]:
            a, _b = self.graph.edges[eid]
            off = Fraction(0) if v == a else self.graph.scale
            for lo, hi in self.by_edge.get(eid, ()):
                if lo <= off <= hi:
                    return True
        return False

    def full_edge_ids(self):
        s = self.graph.scale
        return [e for e, ivals in self.by_edge.items()
                if ivals == ((Fraction(0), s),)]

    def key(self):
        """Hashable identity of the set (edge -> intervals)."""
        return tuple(sorted(
            (eid, self.by_edge[eid]) for eid in self.by_edge))

    def diameter(self, cap_hops: Optional[int] = None) -> Fraction:
        """Exact diameter of the set in the graph metric.

        `cap_hops` bounds the vertex search; it must only be passed when the
        caller can guarantee the true diameter is below `cap_hops * scale`
        (the result is verified against the cap).
        """
        segs = list(self.iter_segments())
        if not segs:
            raise InputError("diameter of empty set")
        g = self.graph
        s = g.scale
        verts = sorted({v for eid, _, _ in segs for v in g.edges[eid]})
        hops = {v: _capped_hops(g, v, cap_hops) for v in verts}

        def vd(u, v):
            h = hops[u].get(v)
            return None if h is None else h * s

        grid = [Fraction(k, 4) * s for k in range(5)]
        best = Fraction(0)
        for i in range(len(segs)):
            for j in range(i, len(segs)):
                e1, lo1, hi1 = segs[i]
                e2, lo2, hi2 = segs[j]
                a, b = g.edges[e1]
                c, d = g.edges[e2]
                routes = []
                for (u, from_lo1) in ((a, True), (b, False)):
                    for (v, from_lo2) in ((c, True), (d, False)):
                        dd = vd(u, v)
                        if dd is not None:
                            routes.append((from_lo1, from_lo2, dd))
                same = (e1 == e2)
                tcands = {lo1, hi1}
                for t in grid:
                    if lo1 < t < hi1:
                        tcands.add(t)
                ucands = {lo2, hi2}
                for u in grid:
                    if lo2 < u < hi2:
                        ucands.add(u)

                def pair_eval(t, u):
                    val = None
                    if same:
                        val = abs(t - u)
                    for (fl1, fl2, dd) in routes:
                        ct = t if fl1 else s - t
                        cu = u if fl2 else s - u
                        cand = ct + dd + cu
                        if val is None or cand < val:
                            val = cand
                    return val

                def sweep(fixed_first: bool, fixed_vals, span):
                    nonlocal best
                    lo, hi = span
                    for f0 in fixed_vals:
                        lines = []  # (slope, intercept) in the free var
                        for (fl1, fl2, dd) in routes:
                            if fixed_first:
                                c0 = (f0 if fl1 else s - f0) + dd
                                sl = 1 if fl2 else -1
                                ic = c0 if fl2 else c0 + s
                            else:
                                c0 = (f0 if fl2 else s - f0) + dd
                                sl = 1 if fl1 else -1
                                ic = c0 if fl1 else c0 + s
                            lines.append((sl, ic))
                        if same:
                            lines.append((1, -f0))
                            lines.append((-1, f0))
                        cands = {lo, hi}
                        if same and lo < f0 < hi:
                            cands.add(f0)
                        for x in range(len(lines)):
                            s1, i1 = lines[x]
                            for y in range(x + 1, len(lines)):
                                s2, i2 = lines[y]
                                if s1 != s2:
                                    cr = Fraction(i2 - i1, s1 - s2)
                                    if lo < cr < hi:
                                        cands.add(cr)
                        for free in cands:
                            val = (pair_eval(f0, free) if fixed_first
                                   else pair_eval(free, f0))
                            if val is not None and val > best:
                                best = val

                sweep(True, tcands, (lo2, hi2))
                sweep(False, ucands, (lo1, hi1))
        if cap_hops is not None and best > cap_hops * s:
            raise InputError("diameter cap too small for this set")
        return best


def path_vertices(g: MetricGraph, path) -> list:
    """Vertex sequence visited by an edge path; raises on non-paths.

    A single edge is traversed low to high by convention; callers that
    need the other direction reverse the result themselves.
    """
    path = list(path)
    if not path:
        raise InputError("empty edge sequence")
    if len(path) == 1:
        a, b = g.edges[path[0]]
        return [a, b]
    first_a, first_b = g.edges[path[0]]
    second = set(g.edges[path[1]])
    if first_b in second:
        verts = [first_a, first_b]
    elif first_a in second:
        verts = [first_b, first_a]
    else:
        raise InputError("edge sequence is not a path")
    for eid in path[1:]:
        a, b = g.edges[eid]
        if verts[-1] == a:
            verts.append(b)
        elif verts[-1] == b:
            verts.append(a)
        else:
            raise InputError("edge sequence is not a path")
    return verts


def _capped_hops(g: MetricGraph, src: int, cap: Optional[int]) -> dict:
    """BFS hop counts from src, stopping at `cap` hops when given."""
    if cap is None:
        full = g.vertex_hops(src)
        return {v: h for v, h in enumerate(full) if h >= 0}
    dist = {src: 0}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        d = dist[v] + 1
        if d > cap:
            continue
        for eid in g.adj[v]:
            w = g.other_end(eid, v)
            if w not in dist:
                dist[w] = d
                queue.append(w)
    return dist
