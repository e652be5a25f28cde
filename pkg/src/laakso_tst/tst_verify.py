"""Curves in a level graph and two-sided Jones-type sum reports.

A curve is a union of whole edges and partial edge intervals at one level
of an inverse system.  The verifier measures how far the curve is from
flat around two families of centers (edge midpoints lifted from every
coarser level, and vertices graded by the coarsest level that sees them),
then aggregates beta^p * diam over each family.

Measurements run at a bounded work level: refining two levels past the
ball's own scale changes any point-to-geodesic distance by less than the
recorded margin, so each record brackets the fully resolved value.  The
curve is sampled at piece endpoints; `beta_lo` uses only samples certainly
inside the ball (and is halved so the membership slack cannot break it),
`beta_hi` uses every piece that could meet the ball, and `margin` is the
sampling gap plus metric slack scaled by the ball diameter.  All engine
arithmetic is integer, in a unit dividing every offset, radius, and margin
involved, so reported fractions are exact.
"""

import bisect
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import InputError, InternalConsistencyError, ParseError
from .fracs import decimal_str, format_fraction, parse_fraction
from .metric_graph import GraphPoint, MetricGraph, _capped_hops
from .monotone_beta import least_geodesic

Number = Union[Fraction, float]

_BIG = 1 << 62


class Curve:
    """Union of whole edges and partial intervals at one level.

    Partials are (edge, from, to) triples with absolute offsets along the
    edge.  Construction normalizes: duplicate edges collapse, overlapping
    or abutting partials on one edge merge, a partial covering its whole
    edge is promoted to a full edge, and partials lying on a listed edge
    are absorbed.  `connected` is a flag, not a validity condition.
    """

    def __init__(self, system, level: int, edges: Iterable[int],
                 partials: Iterable[tuple] = ()):
        level = int(level)
        g = system.level(level)
        s = g.scale
        full = set()
        for e in edges:
            e = int(e)
            if not 0 <= e < g.num_edges:
                raise InputError(f"edge id {e} out of range at level {level}")
            full.add(e)
        spans: Dict[int, list] = {}
        for item in partials:
            try:
                e, lo, hi = item
                e = int(e)
                lo = Fraction(lo)
                hi = Fraction(hi)
            except (TypeError, ValueError, ZeroDivisionError) as exc:
                raise InputError(f"malformed partial {item!r}") from exc
            if not 0 <= e < g.num_edges:
                raise InputError(f"edge id {e} out of range at level {level}")
            if not 0 <= lo < hi <= s:
                raise InputError(
                    f"partial ({lo}, {hi}) needs 0 <= from < to <= {s}")
            spans.setdefault(e, []).append((lo, hi))
        kept = []
        for e in sorted(spans):
            if e in full:
                continue
            merged = []
            for lo, hi in sorted(spans[e]):
                if merged and lo <= merged[-1][1]:
                    if hi > merged[-1][1]:
                        merged[-1][1] = hi
                else:
                    merged.append([lo, hi])
            if len(merged) == 1 and merged[0][0] == 0 and merged[0][1] == s:
                full.add(e)
                continue
            kept.extend((e, lo, hi) for lo, hi in merged)
        self.system = system
        self.level = level
        self.edges = tuple(sorted(full))
        self.partials = tuple(kept)
        self.length = (len(self.edges) * s
                       + sum((hi - lo for _, lo, hi in kept), Fraction(0)))
        pieces = [(e, Fraction(0), s) for e in self.edges]
        pieces.extend(kept)
        pieces.sort()
        self.pieces = tuple(pieces)
        self.connected = self._check_connected(g)

    def _check_connected(self, g: MetricGraph) -> bool:
        pieces = self.pieces
        if len(pieces) <= 1:
            return True
        parent = list(range(len(pieces)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        s = g.scale
        seen_at: Dict[int, int] = {}
        for idx, (e, lo, hi) in enumerate(pieces):
            a, b = g.edges[e]
            for v, touches in ((a, lo == 0), (b, hi == s)):
                if not touches:
                    continue
                other = seen_at.setdefault(v, idx)
                ra, rb = find(idx), find(other)
                if ra != rb:
                    parent[ra] = rb
        root = find(0)
        return all(find(i) == root for i in range(len(pieces)))

    def __repr__(self) -> str:
        return (f"Curve(level={self.level}, edges={len(self.edges)}, "
                f"partials={len(self.partials)}, length={self.length})")


def curve_emit(curve: Curve, path) -> None:
    """Write a curve as canonical JSON; emit of an ingest is byte-identical."""
    obj = {
        "level": curve.level,
        "edges": list(curve.edges),
        "partials": [
            {"edge": e, "from": format_fraction(lo), "to": format_fraction(hi)}
            for e, lo, hi in curve.partials
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def curve_ingest(system, path) -> Curve:
    """Read a curve file, normalizing as in the constructor.

    Malformed JSON, missing keys, dangling edge ids, and offsets that do
    not fit the stated level all raise ParseError.  A disconnected curve
    is legal; callers check `.connected` when they care.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read curve file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"curve file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("curve file must hold a JSON object")
    if "level" not in obj or "edges" not in obj:
        raise ParseError("curve file needs 'level' and 'edges' fields")
    level = obj["level"]
    if not isinstance(level, int) or level < 0:
        raise ParseError("'level' must be a nonnegative integer")
    edges = obj["edges"]
    if not isinstance(edges, list) or not all(isinstance(e, int) for e in edges):
        raise ParseError("'edges' must be a list of integers")
    partials = []
    raw = obj.get("partials", [])
    if not isinstance(raw, list):
        raise ParseError("'partials' must be a list")
    for entry in raw:
        if not isinstance(entry, dict) or not {"edge", "from", "to"} <= set(entry):
            raise ParseError(f"malformed partial entry {entry!r}")
        partials.append((entry["edge"], parse_fraction(str(entry["from"])),
                         parse_fraction(str(entry["to"]))))
    try:
        return Curve(system, level, edges, partials)
    except InputError as exc:
        raise ParseError(f"curve does not fit the system: {exc}") from exc


# -- curve generators ---------------------------------------------------------


def random_connected_curve(system, level: int, n_edges: int, rng) -> Curve:
    """Connected edge set grown one uniformly chosen boundary edge at a time."""
    g = system.level(level)
    if not 1 <= n_edges <= g.num_edges:
        raise InputError("n_edges must be between 1 and the edge count")
    start = rng.randrange(g.num_edges)
    used = {start}
    verts = set(g.edges[start])
    while len(used) < n_edges:
        frontier = sorted({e for v in verts for e in g.adj[v]} - used)
        e = frontier[rng.randrange(len(frontier))]
        used.add(e)
        verts.update(g.edges[e])
    return Curve(system, level, sorted(used))


def doubled_curve(system, curve: Curve, rng) -> Curve:
    """Superset of `curve` grown outward from it, up to twice the edge count."""
    g = system.level(curve.level)
    used = set(curve.edges)
    verts = {v for e in curve.edges for v in g.edges[e]}
    target = len(curve.edges)
    added = 0
    while added < target:
        frontier = sorted({e for v in verts for e in g.adj[v]} - used)
        if not frontier:
            break
        e = frontier[rng.randrange(len(frontier))]
        used.add(e)
        verts.update(g.edges[e])
        added += 1
    return Curve(system, curve.level, sorted(used), curve.partials)


def gamma_curve(system, n: int, eps) -> Curve:
    """Base geodesic with n batches of spikes; total length exactly 1 + n*eps.

    Batch k hangs 4**(k-1) spikes of length eps * 4**(1-k) off the least
    monotone geodesic, one at each split vertex with base coordinate
    (4*i + 1) / 4**k.  A spike walks into the branch the geodesic did not
    take, so it meets the base only at its root; eps <= 1/2 keeps it from
    running past the branch's merge vertex, which makes the measure exact.
    """
    if system.data.m != 4:
        raise InputError("the spike construction needs the m = 4 branch layout")
    n = int(n)
    if n < 0:
        raise InputError("n must be >= 0")
    eps = Fraction(eps)
    if not 0 < eps <= Fraction(1, 2):
        raise InputError("eps must lie in (0, 1/2]")
    g = system.level(n)
    base = least_geodesic(g)
    edges = list(base.columns)
    partials = []
    s = g.scale
    for k in range(1, n + 1):
        length = eps * Fraction(4, 4 ** k)
        for i in range(4 ** (k - 1)):
            q = Fraction(4 * i + 1, 4 ** k)
            root_edge = base.columns[int(q / s)]
            v = g.edges[root_edge][0]
            branch = [e for e in g.adj[v]
                      if g.edges[e][0] == v and e != root_edge]
            if not branch:
                raise InputError(f"no free branch at base coordinate {q}")
            cur = min(branch)
            rem = length
            while rem >= s:
                edges.append(cur)
                rem -= s
                if rem == 0:
                    break
                head = g.edges[cur][1]
                cur = min(e for e in g.adj[head] if g.edges[e][0] == head)
            if rem > 0:
                partials.append((cur, Fraction(0), rem))
    return Curve(system, n, edges, partials)


def counterexample_curve(system, N: int) -> Curve:
    """The length-2 spiked curve at level N (spike scale 1/N).

    Its p = 1 midpoint sum grows like log N even though every member of
    the family has measure exactly 2, so no length bound in terms of the
    p = 1 sum alone can hold.
    """
    N = int(N)
    if N < 2:
        raise InputError("the family needs N >= 2 so the spike scale is <= 1/2")
    return gamma_curve(system, N, Fraction(1, N))


# -- ball records -------------------------------------------------------------


@dataclass(frozen=True)
class BallRecord:
    """One measured ball.

    `ref` is the edge id (midpoint family) or least vertex id (vertex
    family); `multiplicity` counts centers sharing this measurement.
    beta_lo <= beta_hi always, and beta_hi + margin dominates the value
    any finer sampling of the curve could produce.
    """

    family: str
    level: int
    ref: int
    multiplicity: int
    beta_lo: Fraction
    beta_hi: Fraction
    diam: Fraction
    margin: Fraction


class _Samples:
    """Curve piece endpoints projected to one work level, in integer units."""

    def __init__(self, engine: "_Engine", w: int):
        g = engine.sys.level(w)
        self.g = g
        self.s_units = engine.units(g.scale)
        self.ncols = engine.m ** w
        self.pts: List[GraphPoint] = []
        self.qs: List[int] = []
        self.toffs: List[int] = []
        self.routes: List[tuple] = []
        key_idx: Dict[object, int] = {}
        partner_sets: List[set] = []
        curve = engine.curve
        for edge, lo, hi in curve.pieces:
            pair = []
            for off in (lo, hi):
                p = engine.sys.project_point(curve.level, w,
                                             GraphPoint(edge, off))
                key = g.canonical_key(p)
                idx = key_idx.get(key)
                if idx is None:
                    idx = len(self.pts)
                    key_idx[key] = idx
                    a, b = g.edges[p.edge]
                    toff = engine.units(p.offset)
                    self.pts.append(p)
                    self.qs.append(engine.units(g.pi0(p)))
                    self.toffs.append(toff)
                    self.routes.append(((a, toff), (b, self.s_units - toff)))
                    partner_sets.append(set())
                pair.append(idx)
            i, j = pair
            partner_sets[i].add(j)
            partner_sets[j].add(i)
        self.partners = [tuple(sorted(ps)) for ps in partner_sets]
        self.order = sorted(range(len(self.pts)), key=self.qs.__getitem__)
        self.sorted_q = [self.qs[i] for i in self.order]


class _Run:
    """Per-sweep caches: capped BFS hop maps and sample-to-edge costs.

    Hop maps are exact within the cap; any route they cannot certify is
    longer than every threshold the sweep compares against, so a miss is
    as good as the true value.  The map budget only bounds memory; a
    re-queried evicted map is recomputed identically.
    """

    def __init__(self, samples: _Samples, cap_hops: int,
                 map_budget: int = 1024):
        self.samples = samples
        self.cap_hops = cap_hops
        self.map_budget = map_budget
        self.maps: Dict[int, dict] = {}
        self.costs: Dict[tuple, int] = {}

    def hops(self, v: int) -> dict:
        mp = self.maps.get(v)
        if mp is None:
            mp = _capped_hops(self.samples.g, v, self.cap_hops)
            if len(self.maps) >= self.map_budget:
                self.maps.pop(next(iter(self.maps)))
            self.maps[v] = mp
        return mp

    def point_dist(self, si: int, c_edge: int, c_toff: int,
                   c_routes: tuple) -> int:
        sm = self.samples
        best = _BIG
        if sm.pts[si].edge == c_edge:
            best = abs(sm.toffs[si] - c_toff)
        su = sm.s_units
        for sv, soff in sm.routes[si]:
            mp = self.hops(sv)
            for cv, coff in c_routes:
                h = mp.get(cv)
                if h is not None:
                    d = soff + h * su + coff
                    if d < best:
                        best = d
        return best

    def cost(self, si: int, col: int, eid: int) -> int:
        # distance from sample si to the point of edge `eid` sharing its
        # base coordinate; col is determined by si, so the key need not
        # include it
        key = (si, eid)
        got = self.costs.get(key)
        if got is not None:
            return got
        sm = self.samples
        su = sm.s_units
        off = sm.qs[si] - col * su
        a, b = sm.g.edges[eid]
        best = _BIG
        if sm.pts[si].edge == eid:
            best = abs(sm.toffs[si] - off)
        for sv, soff in sm.routes[si]:
            mp = self.hops(sv)
            for tv, tcoff in ((a, off), (b, su - off)):
                h = mp.get(tv)
                if h is not None:
                    d = soff + h * su + tcoff
                    if d < best:
                        best = d
        self.costs[key] = best
        return best


def _minimax(run: _Run, chosen: Sequence[int], cap_u: int) -> int:
    """Least over monotone paths of the worst clamped sample cost.

    Each sample charges the column its base coordinate falls in.  Any
    monotone geodesic restricts to a path across the charged span, and
    any such path extends back to a full geodesic without new charges,
    so the column DP value equals the minimax over whole geodesics.
    Clamping at cap_u cannot disturb the answer because the optimum is
    strictly below the cap (a geodesic through the ball center realizes
    that) while clamped paths stay at or above it.
    """
    sm = run.samples
    su = sm.s_units
    last = sm.ncols - 1
    tables: Dict[int, Dict[int, int]] = {}
    for si in chosen:
        col = sm.qs[si] // su
        if col > last:
            col = last
        tb = tables.setdefault(col, {})
        for eid in sm.g.column_edges(col):
            c = run.cost(si, col, eid)
            if c > cap_u:
                c = cap_u
            prev = tb.get(eid)
            if prev is None or c > prev:
                tb[eid] = c
    g = sm.g
    cur: Optional[Dict[int, int]] = None
    for col in range(min(tables), max(tables) + 1):
        tb = tables.get(col)
        if cur is None:
            cur = {}
            for eid in g.column_edges(col):
                cur[eid] = tb.get(eid, 0) if tb else 0
            continue
        best_at: Dict[int, int] = {}
        for eid, val in cur.items():
            b = g.edges[eid][1]
            prev = best_at.get(b)
            if prev is None or val < prev:
                best_at[b] = val
        nxt: Dict[int, int] = {}
        for eid in g.column_edges(col):
            a = g.edges[eid][0]
            base = best_at.get(a)
            if base is None:
                continue
            c = tb.get(eid, 0) if tb else 0
            nxt[eid] = base if base >= c else c
        if not nxt:
            raise InternalConsistencyError("column DP ran out of paths")
        cur = nxt
    return min(cur.values())


def _measure(run: _Run, qc: int, c_edge: int, c_toff: int, c_routes: tuple,
             r_u: int, s_curve_u: int, margin_u: int,
             cap_u: int) -> Tuple[int, int]:
    """(certain minimax, possible minimax) in units; (0, 0) if nothing meets.

    A piece can meet the ball only if one endpoint sample sits within
    r + one sample spacing of the center; a sample is certainly inside
    once its distance clears the work-level metric slack.
    """
    sm = run.samples
    reach = r_u + s_curve_u
    lo_k = bisect.bisect_left(sm.sorted_q, qc - reach)
    hi_k = bisect.bisect_right(sm.sorted_q, qc + reach)
    if lo_k == hi_k:
        return 0, 0
    sure = r_u - margin_u
    possible: set = set()
    certain: set = set()
    for k in range(lo_k, hi_k):
        si = sm.order[k]
        d = run.point_dist(si, c_edge, c_toff, c_routes)
        if d <= reach:
            possible.add(si)
            possible.update(sm.partners[si])
            if d <= sure:
                certain.add(si)
    if not possible:
        return 0, 0
    opt_p = _minimax(run, sorted(possible), cap_u)
    opt_c = _minimax(run, sorted(certain), cap_u) if certain else 0
    return opt_c, opt_p


class _Engine:
    """Shared state for measuring ball families against one curve."""

    def __init__(self, system, curve: Curve, a_mult: int, threads: int = 1):
        self.sys = system
        self.curve = curve
        self.a_mult = a_mult
        self.threads = max(1, int(threads))
        self.N = curve.level
        self.m = system.data.m
        s_curve = system.level(self.N).scale
        den = lcm(2, system.c_eta().denominator)
        for _e, lo, hi in curve.pieces:
            den = lcm(den, (lo / s_curve).denominator,
                      (hi / s_curve).denominator)
        self.unit = s_curve / den
        self.s_curve_u = den
        self._samples: Dict[int, _Samples] = {}
        self._proj: Dict[int, Dict[int, GraphPoint]] = {}

    def units(self, q) -> int:
        t = Fraction(q) / self.unit
        if t.denominator != 1:
            raise InternalConsistencyError(
                f"{q} is not a multiple of the engine unit {self.unit}")
        return t.numerator

    def samples(self, w: int) -> _Samples:
        sm = self._samples.get(w)
        if sm is None:
            sm = _Samples(self, w)
            self._samples[w] = sm
        return sm

    def vertex_proj(self, w: int,
                    verts: Iterable[int]) -> Dict[int, GraphPoint]:
        cache = self._proj.setdefault(w, {})
        gN = self.sys.level(self.N)
        for v in verts:
            if v not in cache:
                cache[v] = self.sys.project_point(self.N, w,
                                                  gN.vertex_point(v))
        return cache

    def level_params(self, n: int, w: int, sm: _Samples):
        r_u = self.a_mult * self.m ** (self.N - n) * self.s_curve_u
        margin_u = self.units(self.sys.c_eta() * Fraction(1, self.m ** w))
        cap_u = 2 * (r_u + self.s_curve_u + margin_u + sm.s_units)
        cap_hops = cap_u // sm.s_units + 1
        return r_u, margin_u, cap_u, cap_hops

    def center_entry(self, key: int, sm: _Samples, pt: GraphPoint) -> tuple:
        a, b = sm.g.edges[pt.edge]
        toff = self.units(pt.offset)
        qc = self.units(sm.g.pi0(pt))
        return (key, qc, pt.edge, toff, ((a, toff), (b, sm.s_units - toff)))

    def sweep(self, sm: _Samples, centers: list, r_u: int, margin_u: int,
              cap_u: int, cap_hops: int) -> list:
        # centers come sorted by base coordinate so the FIFO map budget
        # behaves like a sliding window
        def one_chunk(chunk):
            run = _Run(sm, cap_hops)
            out = []
            for key, qc, c_edge, c_toff, c_routes in chunk:
                out.append((key, _measure(run, qc, c_edge, c_toff, c_routes,
                                          r_u, self.s_curve_u, margin_u,
                                          cap_u)))
            return out

        if self.threads == 1 or len(centers) < 4 * self.threads:
            return one_chunk(centers)
        size = (len(centers) + self.threads - 1) // self.threads
        chunks = [centers[i:i + size] for i in range(0, len(centers), size)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(one_chunk, chunks))
        return [item for part in parts for item in part]

    def _record(self, family: str, level: int, ref: int, mult: int,
                opt_c: int, opt_p: int, diam: Fraction, diam_u: int,
                margin: Fraction) -> BallRecord:
        lo = Fraction(opt_c, 2 * diam_u)
        hi = Fraction(opt_p, diam_u)
        if hi > 1:
            hi = Fraction(1)
        if lo > hi:
            raise InternalConsistencyError(
                f"certified bound above possible bound at {family} "
                f"{level}/{ref}")
        return BallRecord(family, level, ref, mult, lo, hi, diam, margin)

    def midpoint_records(self, n: int) -> List[BallRecord]:
        w = min(n + 2, self.N)
        sm = self.samples(w)
        g_n = self.sys.level(n)
        r_u, margin_u, cap_u, cap_hops = self.level_params(n, w, sm)
        diam = Fraction(2 * self.a_mult, self.m ** n)
        diam_u = 2 * r_u
        margin = Fraction(self.s_curve_u + margin_u, diam_u)
        centers = [
            self.center_entry(
                eid, sm,
                self.sys.lift_point(n, w, GraphPoint(eid, g_n.scale / 2)))
            for eid in range(g_n.num_edges)
        ]
        centers.sort(key=lambda t: (t[1], t[0]))
        out = [self._record("midpoint", n, key, 1, opt_c, opt_p, diam,
                            diam_u, margin)
               for key, (opt_c, opt_p) in self.sweep(sm, centers, r_u,
                                                     margin_u, cap_u,
                                                     cap_hops)]
        out.sort(key=lambda r: r.ref)
        return out

    def vertex_records(self, max_level: int) -> List[BallRecord]:
        gN = self.sys.level(self.N)
        by_first: Dict[int, List[int]] = {}
        for v in range(gN.num_vertices):
            q = gN.pi0v[v]
            if q.denominator == 1:
                continue
            j = 1
            while (q * self.m ** j).denominator != 1:
                j += 1
            if j <= max_level:
                by_first.setdefault(j, []).append(v)
        out: List[BallRecord] = []
        active: List[int] = []
        for i in range(1, max_level + 1):
            active.extend(by_first.get(i, ()))
            if not active:
                continue
            w = min(i + 2, self.N)
            sm = self.samples(w)
            proj = self.vertex_proj(w, active)
            groups: Dict[object, List[int]] = {}
            for v in active:
                groups.setdefault(sm.g.canonical_key(proj[v]), []).append(v)
            r_u, margin_u, cap_u, cap_hops = self.level_params(i, w, sm)
            diam = Fraction(2 * self.a_mult, self.m ** i)
            diam_u = 2 * r_u
            margin = Fraction(self.s_curve_u + margin_u, diam_u)
            mults: Dict[int, int] = {}
            centers = []
            for members in groups.values():
                v0 = min(members)
                mults[v0] = len(members)
                centers.append(self.center_entry(v0, sm, proj[v0]))
            centers.sort(key=lambda t: (t[1], t[0]))
            recs = [self._record("vertex", i, key, mults[key], opt_c, opt_p,
                                 diam, diam_u, margin)
                    for key, (opt_c, opt_p) in self.sweep(sm, centers, r_u,
                                                          margin_u, cap_u,
                                                          cap_hops)]
            recs.sort(key=lambda r: r.ref)
            out.extend(recs)
        return out


def jones_records(system, curve: Curve, max_level: int, a_mult: int = 2,
                  include_vertex: bool = True,
                  threads: int = 1) -> List[BallRecord]:
    """Measure the midpoint (levels 0..max_level) and vertex ball families.

    Vertex centers of grade j get one ball per radius level i in
    j..max_level; centers that coincide at the work level are measured
    once and reported with a multiplicity.
    """
    if curve.system is not system:
        raise InputError("curve was built over a different system")
    if not isinstance(max_level, int) or max_level < 0:
        raise InputError("max_level must be a nonnegative integer")
    if max_level > curve.level:
        raise InputError("max_level cannot exceed the curve's level")
    if not isinstance(a_mult, int) or isinstance(a_mult, bool) or a_mult < 2:
        raise InputError("a_mult must be an integer >= 2")
    eng = _Engine(system, curve, a_mult, threads)
    records: List[BallRecord] = []
    for n in range(max_level + 1):
        records.extend(eng.midpoint_records(n))
    if include_vertex:
        records.extend(eng.vertex_records(max_level))
    return records


# -- aggregation --------------------------------------------------------------


def _cell(x: Number) -> str:
    if isinstance(x, Fraction):
        return format_fraction(x)
    return repr(float(x))


def _dec(x: Number) -> str:
    if isinstance(x, Fraction):
        return decimal_str(x)
    return repr(float(x))


@dataclass(frozen=True)
class SumRow:
    family: str
    level: int
    count: int
    sum_lo: Number
    sum_hi: Number
    sum_hi_margin: Number


@dataclass(frozen=True)
class JonesSumReport:
    """Per-family, per-level sums of beta^p * diam with totals and ratios.

    total_* cover the midpoint family; the vertex family is reported
    separately because its ball count per level is not comparable.
    sum_hi_margin folds the sampling margin into the upper reading, so
    total_lo <= total_hi <= total_hi_margin brackets the resolved value.
    """

    p: Number
    a_mult: int
    max_level: int
    curve_length: Fraction
    rows: Tuple[SumRow, ...]
    total_lo: Number
    total_hi: Number
    total_hi_margin: Number
    ratio_lo: Number
    ratio_hi: Number
    vertex_total_lo: Number
    vertex_total_hi: Number
    vertex_total_hi_margin: Number

    def to_json_dict(self) -> dict:
        return {
            "p": _cell(self.p),
            "a_mult": self.a_mult,
            "max_level": self.max_level,
            "curve_length": _cell(self.curve_length),
            "curve_length_dec": _dec(self.curve_length),
            "total_lo": _cell(self.total_lo),
            "total_lo_dec": _dec(self.total_lo),
            "total_hi": _cell(self.total_hi),
            "total_hi_dec": _dec(self.total_hi),
            "total_hi_margin": _cell(self.total_hi_margin),
            "ratio_lo": _cell(self.ratio_lo),
            "ratio_hi": _cell(self.ratio_hi),
            "vertex_total_lo": _cell(self.vertex_total_lo),
            "vertex_total_hi": _cell(self.vertex_total_hi),
            "vertex_total_hi_margin": _cell(self.vertex_total_hi_margin),
            "rows": [
                {"family": row.family, "level": row.level,
                 "count": row.count, "sum_lo": _cell(row.sum_lo),
                 "sum_hi": _cell(row.sum_hi),
                 "sum_hi_margin": _cell(row.sum_hi_margin)}
                for row in self.rows
            ],
        }


def jones_sum(system, curve: Curve, p, max_level: int, a_mult: int = 2,
              include_vertex: bool = True, records=None,
              threads: int = 1) -> JonesSumReport:
    """Aggregate measured records into a JonesSumReport.

    Integer p keeps every sum an exact rational; any other exponent falls
    back to floats.  Pass `records` to reuse one measurement across
    several exponents.
    """
    try:
        p_frac = Fraction(p)
    except (TypeError, ValueError) as exc:
        raise InputError(f"cannot read the exponent {p!r}") from exc
    if p_frac <= 0:
        raise InputError("the exponent p must be positive")
    if not isinstance(max_level, int) or max_level < 0:
        raise InputError("max_level must be a nonnegative integer")
    if max_level > curve.level:
        raise InputError("max_level cannot exceed the curve's level")
    if records is None:
        records = jones_records(system, curve, max_level, a_mult,
                                include_vertex, threads)
    exact = p_frac.denominator == 1
    zero: Number = Fraction(0) if exact else 0.0
    one = Fraction(1)
    acc: Dict[tuple, list] = {}
    if exact:
        k = p_frac.numerator
        for r in records:
            cell = acc.setdefault((r.family, r.level), [0, zero, zero, zero])
            hi_m = r.beta_hi + r.margin
            if hi_m > one:
                hi_m = one
            cell[0] += r.multiplicity
            cell[1] += r.multiplicity * r.beta_lo ** k * r.diam
            cell[2] += r.multiplicity * r.beta_hi ** k * r.diam
            cell[3] += r.multiplicity * hi_m ** k * r.diam
    else:
        pf = float(p_frac)
        for r in records:
            cell = acc.setdefault((r.family, r.level), [0, zero, zero, zero])
            hi_m = min(one, r.beta_hi + r.margin)
            diam_f = float(r.diam)
            cell[0] += r.multiplicity
            cell[1] += r.multiplicity * float(r.beta_lo) ** pf * diam_f
            cell[2] += r.multiplicity * float(r.beta_hi) ** pf * diam_f
            cell[3] += r.multiplicity * float(hi_m) ** pf * diam_f
    rows = tuple(SumRow(fam, lev, *acc[(fam, lev)])
                 for fam, lev in sorted(acc))

    def totals(fam: str):
        lo = hi = him = zero
        for row in rows:
            if row.family == fam:
                lo = lo + row.sum_lo
                hi = hi + row.sum_hi
                him = him + row.sum_hi_margin
        return lo, hi, him

    total_lo, total_hi, total_him = totals("midpoint")
    v_lo, v_hi, v_him = totals("vertex")
    length = curve.length
    ratio_lo = total_lo / length if length else zero
    ratio_hi = total_hi / length if length else zero
    return JonesSumReport(
        p=p_frac if exact else float(p_frac), a_mult=a_mult,
        max_level=max_level, curve_length=length, rows=rows,
        total_lo=total_lo, total_hi=total_hi, total_hi_margin=total_him,
        ratio_lo=ratio_lo, ratio_hi=ratio_hi, vertex_total_lo=v_lo,
        vertex_total_hi=v_hi, vertex_total_hi_margin=v_him)


def write_jones_csv(report: JonesSumReport, path) -> None:
    """Per-level rows plus an `all` totals row per family."""
    lines = ["family,level,count,sum_lo,sum_hi,sum_hi_margin,"
             "sum_lo_dec,sum_hi_dec"]

    def fmt(fam, level, count, lo, hi, him) -> str:
        return ",".join([fam, str(level), str(count), _cell(lo), _cell(hi),
                         _cell(him), _dec(lo), _dec(hi)])

    for row in report.rows:
        lines.append(fmt(row.family, row.level, row.count, row.sum_lo,
                         row.sum_hi, row.sum_hi_margin))
    lines.append(fmt("midpoint", "all",
                     sum(r.count for r in report.rows
                         if r.family == "midpoint"),
                     report.total_lo, report.total_hi,
                     report.total_hi_margin))
    vertex_rows = [r for r in report.rows if r.family == "vertex"]
    if vertex_rows:
        lines.append(fmt("vertex", "all", sum(r.count for r in vertex_rows),
                         report.vertex_total_lo, report.vertex_total_hi,
                         report.vertex_total_hi_margin))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
