"""Constructive short connected sets through a finite point cloud.

The builder grows a connected curve level by level.  Every stage
classifies the current coarse edges with the flatness functional and
then acts per edge: a defective edge (large flatness defect) is expanded
into lifts of its whole child family, an edge whose parent was defective
keeps its stored lift untouched, and a run of flat edges is replaced by
a single minimax geodesic switching tracks only at special vertices next
to cloud points.  A connection pass repairs the seams where parallel
lifts separate, charging each repair either to a defective region or to
a reusable corridor along an edge that stays far from the cloud.

The result bundles the curve, the regions that paid for it, leftover
clusters that must be handled at a finer scale, and machine-checked
certificates for every claim a caller relies on.  All arithmetic is
exact rational.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import log
from typing import Dict, FrozenSet, List, Optional, Tuple

from .errors import InputError, InternalConsistencyError
from .inverse_system import InverseSystem
from .limit_space import LimitPoint, make_cube
from .metric_graph import GraphPoint, MetricGraph, SegmentSet, _capped_hops
from .monotone_beta import PointCloud, region_pi0_range, split_membership
from .tst_verify import Curve


# -- parameters ---------------------------------------------------------------


@dataclass(frozen=True)
class ConstructionParams:
    epsilon: Fraction
    a_mult: int
    depth: int
    n0: Optional[int] = None


def default_epsilon(sys: InverseSystem, a_mult: Optional[int] = None) -> Fraction:
    """Threshold small enough that every geometric margin in the
    construction holds with room to spare."""
    a = sys.default_ball_multiple() if a_mult is None else a_mult
    base = 10 * sys.c_eta() * a * sys.data.m * sys.data.delta
    return Fraction(1) / base ** 10


def make_params(sys: InverseSystem, depth: int, epsilon=None,
                a_mult: Optional[int] = None,
                n0: Optional[int] = None) -> ConstructionParams:
    if int(depth) != depth or depth < 1:
        raise InputError(f"depth must be a positive integer, got {depth}")
    a = sys.default_ball_multiple() if a_mult is None else int(a_mult)
    if a < 1:
        raise InputError("ball multiple must be a positive integer")
    eps = default_epsilon(sys, a) if epsilon is None else Fraction(epsilon)
    if not Fraction(0) < eps < Fraction(1):
        raise InputError(f"epsilon must lie strictly inside (0, 1), got {eps}")
    if n0 is not None and not 0 <= n0 <= depth:
        raise InputError(f"root level {n0} outside [0, {depth}]")
    return ConstructionParams(eps, a, int(depth), n0)


def perturb_cloud(sys: InverseSystem, points, depth: int) -> PointCloud:
    """Nudge input points off vertices and midpoints, then deduplicate.

    Accepts a PointCloud, limit points, graph points at the given depth,
    or raw (edge, offset) pairs.  The nudge is one forty-sixth-millionth
    of nothing in particular: s * m**-3, small enough to stay inside the
    half-cell on either side.
    """
    g = sys.level(depth)
    s = g.scale
    half = s / 2
    delta0 = s / sys.data.m ** 3
    if isinstance(points, PointCloud):
        raw = [x.at(depth) for x in points.points]
    else:
        raw = []
        for item in points:
            if isinstance(item, LimitPoint):
                raw.append(item.at(depth))
            elif isinstance(item, GraphPoint):
                raw.append(item)
            else:
                e, off = item
                raw.append(GraphPoint(int(e), Fraction(off)))
    out, seen = [], set()
    for p in raw:
        if not 0 <= p.edge < g.num_edges or not 0 <= p.offset <= s:
            raise InputError(
                f"point ({p.edge}, {p.offset}) is not on the level-{depth} graph")
        off = p.offset
        if off % half == 0:
            if off == 0:
                off = delta0
            elif off == s:
                off = s - delta0
            else:
                off = half + delta0
        q = GraphPoint(p.edge, off)
        key = g.canonical_key(q)
        if key in seen:
            continue
        seen.add(key)
        out.append(LimitPoint.from_point(sys, depth, q, depth))
    if not out:
        raise InputError("empty point cloud")
    return PointCloud(tuple(out))


# -- small geometric helpers --------------------------------------------------


def _edge_span(g, eid: int) -> Tuple[Fraction, Fraction]:
    lo = g.pi0v[g.edges[eid][0]]
    return lo, lo + g.scale


def _fiber_dist(g, p: GraphPoint, dv, eid: int, off: Fraction) -> Fraction:
    """Exact distance from p to the point at local offset off on eid,
    given p's vertex-distance table."""
    a, b = g.edges[eid]
    best = min(dv[a] + off, dv[b] + (g.scale - off))
    if p.edge == eid:
        direct = abs(p.offset - off)
        if direct < best:
            best = direct
    return best


class _LazyDV:
    """Vertex-distance view of a point, computed entrywise on demand.

    Behaves like the list from point_vertex_dists but touches only the
    vertices a caller actually asks about, using the graph's cached
    integer hop tables.
    """

    __slots__ = ("h0", "h1", "t", "rt", "s", "memo")

    def __init__(self, g: MetricGraph, p: GraphPoint):
        u0, u1 = g.edges[p.edge]
        self.h0 = g.vertex_hops(u0)
        self.h1 = g.vertex_hops(u1)
        self.t = p.offset
        self.rt = g.scale - p.offset
        self.s = g.scale
        self.memo: Dict[int, Optional[Fraction]] = {}

    def __getitem__(self, v: int) -> Optional[Fraction]:
        d = self.memo.get(v, -1)
        if d == -1:
            a, b = self.h0[v], self.h1[v]
            da = a * self.s + self.t if a >= 0 else None
            db = b * self.s + self.rt if b >= 0 else None
            d = db if da is None else (da if db is None else min(da, db))
            self.memo[v] = d
        return d


def _on_edge(g, eid: int, p: GraphPoint) -> bool:
    """Closed containment: p lies on eid, endpoints included."""
    if p.edge == eid:
        return True
    a, b = g.edges[eid]
    if p.offset == 0:
        return g.edges[p.edge][0] in (a, b)
    if p.offset == g.scale:
        return g.edges[p.edge][1] in (a, b)
    return False


def _window_dp(g, cols: range, cost: dict, allow) -> Tuple[Fraction, List[int]]:
    """Minimax path through one edge per column, least-id tie-break.

    cost maps (col, edge) to that edge's running-max contribution and
    allow(col), when given, whitelists the edges usable in a column.
    """
    def col_edges(c):
        es = sorted(g.column_edges(c))
        if allow is None:
            return es
        ok = allow(c)
        return es if ok is None else [e for e in es if e in ok]

    first = cols[0]
    value = {e: cost.get((first, e), Fraction(0)) for e in col_edges(first)}
    back: List[dict] = [{e: None for e in value}]
    if not value:
        raise InternalConsistencyError("window has no admissible edges",
                                       witness=("column", first))
    for col in cols[1:]:
        nvalue, nback = {}, {}
        for e in col_edges(col):
            a = g.edges[e][0]
            best = best_p = None
            for pid in col_edges(col - 1):
                if g.edges[pid][1] != a or pid not in value:
                    continue
                if best is None or value[pid] < best:
                    best, best_p = value[pid], pid
            if best is None:
                continue
            nvalue[e] = max(best, cost.get((col, e), Fraction(0)))
            nback[e] = best_p
        value = nvalue
        back.append(nback)
        if not value:
            raise InternalConsistencyError(
                "window path ran out of continuations",
                witness=("column", col))
    last = min(value, key=lambda e: (value[e], e))
    path = [last]
    for k in range(len(back) - 1, 0, -1):
        path.append(back[k][path[-1]])
    path.reverse()
    return value[last], path


# -- classification primitives ------------------------------------------------


@dataclass(frozen=True)
class ClassifyResult:
    level: int
    edge: int
    verdict: str
    beta: Fraction
    ball_lo: bool
    ball_hi: bool


def _free_beta(sys, E, n, eid, params) -> Fraction:
    """Flatness defect of the two-edge region around eid, unrestricted."""
    spec = make_cube(sys, n, eid, params.a_mult)
    _certain, possible = split_membership(E, spec) if E.points else ([], [])
    if not possible:
        return Fraction(0)
    N = params.depth
    g = sys.level(N)
    s = g.scale
    ncols = sys.data.m ** N
    lo_q, hi_q = region_pi0_range(spec)
    c_lo, c_hi = max(0, int(lo_q / s)), min(ncols - 1, int(hi_q / s))
    cost = {}
    for x in possible:
        p = x.at(N)
        q = g.pi0(p)
        col = min(max(int(q / s), c_lo), c_hi)
        dv = _LazyDV(g, p)
        for e2 in g.column_edges(col):
            d = _fiber_dist(g, p, dv, e2, q - col * s)
            key = (col, e2)
            if key not in cost or d > cost[key]:
                cost[key] = d
    opt, _path = _window_dp(g, range(c_lo, c_hi + 1), cost, None)
    return opt / spec.diam_norm


def _cube_diameter(g: MetricGraph, spec, hop_cache: Dict[int, dict]) -> Fraction:
    """Exact diameter of a cube member set, computed in quarter-scale ints.

    Members are full edges plus isolated endpoint vertices, so each pair
    distance is a min of forms +-t +- u + const with constants in s*Z;
    every vertex of that arrangement sits on the s/4 grid and the grid
    evaluation below is exact whenever the optimal route per pair
    survives the hop cap.  A value above 6 s means some route was capped
    away, and the general sweep takes over.
    """
    segs = []
    for eid in sorted(spec.full_edges):
        segs.append((eid, 0, 4))
    for v in sorted(spec.isolated_vertices):
        eid = min(g.adj[v])
        segs.append((eid, 0, 0) if g.edges[eid][0] == v else (eid, 4, 4))
    cap = 7
    hops = {}
    for eid, _, _ in segs:
        for v in g.edges[eid]:
            if v not in hops:
                h = hop_cache.get(v)
                if h is None:
                    h = _capped_hops(g, v, cap)
                    hop_cache[v] = h
                hops[v] = h
    best = 0
    for i in range(len(segs)):
        e1, lo1, hi1 = segs[i]
        a, b = g.edges[e1]
        ends1 = ((hops[a], True), (hops[b], False))
        for j in range(i, len(segs)):
            e2, lo2, hi2 = segs[j]
            c, d = g.edges[e2]
            routes = []
            for h1, f1 in ends1:
                for v2, f2 in ((c, True), (d, False)):
                    dd = h1.get(v2)
                    if dd is not None:
                        routes.append((f1, f2, 4 * dd))
            same = e1 == e2
            for t in range(lo1, hi1 + 1):
                for u in range(lo2, hi2 + 1):
                    val = abs(t - u) if same else None
                    for f1, f2, dd4 in routes:
                        w = (t if f1 else 4 - t) + dd4 + (u if f2 else 4 - u)
                        if val is None or w < val:
                            val = w
                    if val is None:
                        val = 999
                    if val > best:
                        best = val
    if best > 24:
        return spec.exact_diameter()
    return Fraction(best, 4) * g.scale


def classify_edge(sys, E: PointCloud, n: int, eid: int,
                  params: ConstructionParams, root: bool = False,
                  _beta: Optional[Fraction] = None) -> ClassifyResult:
    """Good means flat and witnessed by cloud points near both endpoints.

    A root edge is exempt from the endpoint requirement.  The endpoint
    balls shrink with epsilon; with a large threshold they can have
    negative radius, in which case everything non-root is bad.
    """
    beta = _free_beta(sys, E, n, eid, params) if _beta is None else _beta
    g_n = sys.level(n)
    lo, hi = _edge_span(g_n, eid)
    a, b = g_n.edges[eid]
    r = (1 - 2 * params.a_mult * params.epsilon) * g_n.scale
    ok_a = ok_b = False
    if r > 0:
        for x in E.points:
            q = x.pi0()
            if not lo <= q <= hi:
                continue
            dv = _LazyDV(g_n, x.at(n))
            if dv[a] <= r:
                ok_a = True
            if dv[b] <= r:
                ok_b = True
            if ok_a and ok_b:
                break
    if beta >= params.epsilon:
        verdict = "bad"
    elif root or (ok_a and ok_b):
        verdict = "good"
    else:
        verdict = "bad"
    return ClassifyResult(n, eid, verdict, beta, ok_a, ok_b)


def special_vertices(sys, E: PointCloud, n: int, eid: int,
                     i: int) -> Tuple[Fraction, ...]:
    """Base coordinates of the exact level-i vertices interior to eid
    that sit within half a level-i cell of a cloud point riding close to
    the edge (closer than one level-n edge in its own fiber)."""
    if i <= n:
        raise InputError("special vertex level must exceed the edge level")
    g_n = sys.level(n)
    lo, hi = _edge_span(g_n, eid)
    m = sys.data.m
    step = Fraction(1, m ** i)
    half = step / 2
    gap = Fraction(1, m ** n)
    cands = []
    for k in range(1, m ** (i - n)):
        v0 = lo + k * step
        if (v0 * m ** (i - 1)).denominator == 1:
            continue  # coarser grid point, not exactly level i
        cands.append(v0)
    if not cands:
        return ()
    hits = set()
    for x in E.points:
        q = x.pi0()
        if not lo <= q <= hi:
            continue
        p = x.at(n)
        dv = _LazyDV(g_n, p)
        if _fiber_dist(g_n, p, dv, eid, q - lo) >= gap:
            continue
        for v0 in cands:
            if abs(q - v0) <= half:
                hits.add(v0)
    return tuple(sorted(hits))


def s_set(sys, n: int, eid: int) -> Tuple[int, ...]:
    """All child edges of one edge, across every sub-column."""
    kids = set()
    for sub in range(sys.data.m):
        kids.update(sys.edge_children(n, eid, sub))
    return tuple(sorted(kids))


def s_lift(sys, n: int, eid: int, depth: int) -> Dict[int, Tuple[int, ...]]:
    """One connected lift per child, taken down to the working depth.

    Every lift starts at the least vertex over the child's low end and
    follows least-id continuations, so repeated calls agree.
    """
    if depth < n + 1:
        raise InputError("lift depth must exceed the edge level")
    g_c = sys.level(n + 1)
    out = {}
    for child in s_set(sys, n, eid):
        if depth == n + 1:
            out[child] = (child,)
            continue
        a = g_c.edges[child][0]
        start = sys.lift_point(n + 1, depth, g_c.vertex_point(a))
        out[child] = tuple(sys.lift_path(n + 1, depth, [child], start))
    return out


# -- records ------------------------------------------------------------------


@dataclass
class CubeRecord:
    """One flatness region: its edges, exact diameter, and defect."""
    level: int
    edge: int
    key: object
    member_edges: FrozenSet[int]
    diam: Fraction
    beta: Fraction
    large: bool
    in_gamma: bool = False


@dataclass(frozen=True)
class Piece:
    """A monotone stretch of the working lift at full depth."""
    lo: Fraction
    hi: Fraction
    path: Tuple[int, ...]

    def cut(self, q_lo: Fraction, q_hi: Fraction, s: Fraction) -> "Piece":
        i0 = int((q_lo - self.lo) / s)
        i1 = int((q_hi - self.lo) / s)
        return Piece(q_lo, q_hi, self.path[i0:i1])


@dataclass
class StageSet:
    level: int
    edges: Tuple[int, ...]
    tags: Dict[int, str]
    good: FrozenSet[int]
    v_set: FrozenSet[int]
    beta: Dict[int, Fraction]
    components: Tuple[Tuple[int, ...], ...]
    checks: Dict[str, bool]
    notes: List[str] = field(default_factory=list)


@dataclass
class TRecord:
    level: int
    edge: int
    lo: Fraction
    hi: Fraction
    path: Tuple[int, ...]
    uses: int = 0


@dataclass(frozen=True)
class C1Record:
    stage: int
    t_key: Tuple
    pair: Tuple[int, int]
    length: Fraction


@dataclass(frozen=True)
class C2Record:
    stage: int
    cube_level: int
    cube_edge: int
    pair: Tuple[int, int]
    length: Fraction


@dataclass(frozen=True)
class ReliftRecord:
    stage: int
    pair: Tuple[int, int]
    length: Fraction


@dataclass
class ConnectionLedger:
    t_records: Dict[Tuple, TRecord] = field(default_factory=dict)
    c1: List[C1Record] = field(default_factory=list)
    c2: List[C2Record] = field(default_factory=list)
    relifts: List[ReliftRecord] = field(default_factory=list)
    stage_lines: List[dict] = field(default_factory=list)


@dataclass
class RemainderPiece:
    """A cluster the curve missed at some level, handed back for a
    finer-scale pass."""
    level: int
    edge: int
    points: PointCloud
    dist: Fraction
    diam: Fraction


@dataclass(frozen=True)
class CertLine:
    name: str
    passed: bool
    measured: Optional[Fraction]
    bound: Optional[Fraction]
    note: str = ""


@dataclass
class RunResult:
    gamma: Curve
    q_gamma: List[CubeRecord]
    remainders: List[RemainderPiece]
    cert: List[CertLine]
    stages: List[StageSet]
    ledger: ConnectionLedger
    large_sum: Fraction
    n0: int
    root_edge: int


@dataclass
class BuildResult:
    curve: Curve
    report: dict
    runs: List[RunResult]


# -- the stage machine --------------------------------------------------------


class ConstructionState:
    """Working data of one run over a single root edge.

    Everything lives at the working depth: `pieces` are monotone edge
    paths whose base intervals tile the root span (with parallel extras
    over expanded families), `connectors` are repair paths, and the
    per-level records keep the classification history that later stages
    and the certificates consult.
    """

    def __init__(self, sys: InverseSystem, E: PointCloud, n0: int,
                 root_edge: int, params: ConstructionParams, threads: int = 1):
        if not isinstance(E, PointCloud):
            raise InputError("expected a PointCloud; run perturb_cloud first")
        N = params.depth
        if E.depth < N:
            raise InputError("cloud depth is above the working depth")
        if not 0 <= n0 < N:
            raise InputError(f"root level {n0} must lie in [0, {N})")
        g_root = sys.level(n0)
        if not 0 <= root_edge < g_root.num_edges:
            raise InputError(f"no edge {root_edge} at level {n0}")
        self.sys = sys
        self.params = params
        self.threads = max(1, threads)
        self.n0 = n0
        self.root_edge = root_edge
        self.g = sys.level(N)
        self.s = self.g.scale
        half = self.s / 2
        for x in E.points:
            p = x.at(N)
            if p.offset % half == 0:
                raise InputError(
                    "cloud touches a vertex or midpoint; apply perturb_cloud")
            if x.at(n0).edge != root_edge:
                raise InputError("cloud is not contained in the root edge")
        self.E = E
        self.E_N = [x.at(N) for x in E.points]
        self.E_q = [self.g.pi0(p) for p in self.E_N]
        self.root_lo, self.root_hi = _edge_span(g_root, root_edge)
        self.col_span = (int(self.root_lo / self.s),
                         int(self.root_hi / self.s) - 1)
        if n0 == 0:
            self.allowed = None
        else:
            tab = sys.projection_table(N, n0)
            self.allowed = frozenset(
                e for e in range(self.g.num_edges)
                if tab.edge_image(e)[0] == root_edge)
        self.pieces: List[Piece] = []
        self.connectors: List[Tuple[str, Tuple[int, ...]]] = []
        self.ledger = ConnectionLedger()
        self.records: List[StageSet] = []
        self.cube_memo: Dict[Tuple[int, int], CubeRecord] = {}
        self.key_memo: Dict[Tuple, CubeRecord] = {}
        self.large_hist: Dict[int, FrozenSet[int]] = {}
        self.s_store: Dict[Tuple[int, int], Dict[int, Tuple[int, ...]]] = {}
        self._tables = {}
        self._desc_memo = {}
        self._track_memo = {}
        self._dv_cache = {}
        self._hop_cache: Dict[int, Dict[int, dict]] = {}
        self.stage = n0
        rec = self._classify_stage(n0, edges=(root_edge,))
        self.records.append(rec)
        # the root lift: one minimax path over the whole root span
        c0, c1 = self.col_span
        cost = self._window_cost(list(self.E.points), c0, c1, self._allow_all)
        _v, path = _window_dp(self.g, range(c0, c1 + 1), cost, self._allow_all)
        self.pieces = [Piece(self.root_lo, self.root_hi, tuple(path))]
        self._check_coverage()

    @classmethod
    def initial(cls, sys, E, n0, root_edge, params, threads=1):
        return cls(sys, E, n0, root_edge, params, threads)

    # -- plumbing -------------------------------------------------------------

    def _allow_all(self, _col):
        return self.allowed

    def _table(self, lev: int):
        tab = self._tables.get(lev)
        if tab is None:
            tab = self.sys.projection_table(self.params.depth, lev)
            self._tables[lev] = tab
        return tab

    def _dv(self, p: GraphPoint):
        key = self.g.canonical_key(p)
        dv = self._dv_cache.get(key)
        if dv is None:
            dv = _LazyDV(self.g, p)
            self._dv_cache[key] = dv
        return dv

    def _desc(self, n: int, eid: int) -> FrozenSet[int]:
        """Working-depth edges projecting into one level-n edge."""
        key = (n, eid)
        out = self._desc_memo.get(key)
        if out is None:
            g_n = self.sys.level(n)
            lo, hi = _edge_span(g_n, eid)
            tab = self._table(n)
            found = []
            for c in range(int(lo / self.s), int(hi / self.s)):
                for e in self.g.column_edges(c):
                    if tab.edge_image(e)[0] == eid:
                        found.append(e)
            out = frozenset(found)
            self._desc_memo[key] = out
        return out

    def _edge_track(self, lev: int, eid: int) -> Tuple[int, ...]:
        key = (lev, eid)
        out = self._track_memo.get(key)
        if out is None:
            g_lev = self.sys.level(lev)
            a = g_lev.edges[eid][0]
            start = self.sys.lift_point(lev, self.params.depth,
                                        g_lev.vertex_point(a))
            out = tuple(self.sys.lift_path(lev, self.params.depth,
                                           [eid], start))
            self._track_memo[key] = out
        return out

    def _s_lift(self, n: int, eid: int) -> Dict[int, Tuple[int, ...]]:
        key = (n, eid)
        out = self.s_store.get(key)
        if out is None:
            out = s_lift(self.sys, n, eid, self.params.depth)
            self.s_store[key] = out
        return out

    def piece_edges(self) -> List[int]:
        return sorted({e for p in self.pieces for e in p.path})

    def structure_edges(self) -> set:
        es = {e for p in self.pieces for e in p.path}
        for _kind, path in self.connectors:
            es.update(path)
        return es

    def structure_length(self) -> Fraction:
        return len(self.structure_edges()) * self.s

    def _check_coverage(self):
        cur = self.root_lo
        for lo, hi in sorted((p.lo, p.hi) for p in self.pieces):
            if lo > cur:
                raise InternalConsistencyError(
                    "coverage gap in the working lift", witness=(cur, lo))
            if hi > cur:
                cur = hi
        if cur < self.root_hi:
            raise InternalConsistencyError(
                "coverage gap in the working lift",
                witness=(cur, self.root_hi))

    # -- flatness region memo ---------------------------------------------------

    def _beta_of(self, spec) -> Fraction:
        _certain, possible = split_membership(self.E, spec)
        if not possible:
            return Fraction(0)
        lo_q, hi_q = region_pi0_range(spec)
        c_lo = max(0, int(lo_q / self.s), self.col_span[0])
        c_hi = min(self.g.m ** self.params.depth - 1, int(hi_q / self.s),
                   self.col_span[1])
        cost = self._window_cost(possible, c_lo, c_hi, self._allow_all)
        opt, _path = _window_dp(self.g, range(c_lo, c_hi + 1), cost,
                                self._allow_all)
        return opt / spec.diam_norm

    def _window_cost(self, pts, c_lo: int, c_hi: int, allow) -> dict:
        g, s = self.g, self.s
        cost = {}
        for x in pts:
            p = x.at(self.params.depth)
            q = g.pi0(p)
            col = min(max(int(q / s), c_lo), c_hi)
            dv = self._dv(p)
            ok = allow(col) if allow is not None else None
            for e2 in g.column_edges(col):
                if ok is not None and e2 not in ok:
                    continue
                d = _fiber_dist(g, p, dv, e2, q - col * s)
                key = (col, e2)
                if key not in cost or d > cost[key]:
                    cost[key] = d
        return cost

    def _cube(self, lev: int, eid: int, mark: bool = False) -> CubeRecord:
        rec = self.cube_memo.get((lev, eid))
        if rec is None:
            spec = make_cube(self.sys, lev, eid, self.params.a_mult)
            kk = (lev, spec.key())
            rec = self.key_memo.get(kk)
            if rec is None:
                beta = self._beta_of(spec)
                diam = _cube_diameter(self.sys.level(lev), spec,
                                      self._hop_cache.setdefault(lev, {}))
                rec = CubeRecord(lev, eid, spec.key(),
                                 frozenset(spec.members.full_edge_ids()),
                                 diam, beta,
                                 beta >= self.params.epsilon)
                self.key_memo[kk] = rec
            self.cube_memo[(lev, eid)] = rec
        if mark:
            rec.in_gamma = True
        return rec

    # -- per-stage classification -------------------------------------------------

    def _gamma_edges(self, lev: int) -> List[int]:
        es = {e for p in self.pieces for e in p.path}
        if lev == self.params.depth:
            return sorted(es)
        tab = self._table(lev)
        return sorted({tab.edge_image(e)[0] for e in es})

    def _classify_stage(self, lev: int, edges=None) -> StageSet:
        eps = self.params.epsilon
        if edges is None:
            edges = tuple(self._gamma_edges(lev))
        else:
            edges = tuple(edges)
        if self.threads > 1 and len(edges) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                list(ex.map(lambda e: self._cube(lev, e), edges))
        tags, good, beta = {}, set(), {}
        for e in edges:
            rec = self._cube(lev, e, mark=True)
            beta[e] = rec.beta
            if rec.large:
                tags[e] = "large-beta"
            else:
                parent_large = False
                if lev > self.n0:
                    pe = self.sys.edge_parent(lev, e)[0]
                    parent_large = self._cube(lev - 1, pe).beta >= eps
                tags[e] = ("recently-large" if parent_large
                           else "monotone-component")
            res = classify_edge(self.sys, self.E, lev, e, self.params,
                                root=(lev == self.n0), _beta=rec.beta)
            if res.verdict == "good":
                good.add(e)
        self.large_hist[lev] = frozenset(
            e for e in edges if tags[e] == "large-beta")
        v_set = self._v_set(lev, edges)
        comps, purity = self._components(lev, edges, tags, v_set)
        checks = {"purity": purity,
                  "largebeta-break": self._check_ii(lev, edges),
                  "double-edges": self._check_iii(lev, edges)}
        return StageSet(lev, edges, tags, frozenset(good), v_set, beta,
                        comps, checks)

    def _anc_edge(self, lev: int, eid: int, k: int) -> int:
        a = eid
        for lv in range(lev, k, -1):
            a = self.sys.edge_parent(lv, a)[0]
        return a

    def _v_set(self, lev: int, edges) -> FrozenSet[int]:
        g_lev = self.sys.level(lev)
        m = self.sys.data.m
        out = set()
        for v in sorted({v for e in edges for v in g_lev.edges[e]}):
            q = g_lev.pi0v[v]
            exact = 0
            while (q * m ** exact).denominator != 1:
                exact += 1
            for k in range(max(self.n0, exact - 1), lev + 1):
                if not self.large_hist.get(k):
                    continue
                pt = self.sys.project_point(lev, k, g_lev.vertex_point(v))
                g_k = self.sys.level(k)
                if pt.offset == 0 or pt.offset == g_k.scale:
                    vid = g_k.edges[pt.edge][0 if pt.offset == 0 else 1]
                    hit = any(e2 in self.large_hist[k] for e2 in g_k.adj[vid])
                else:
                    hit = pt.edge in self.large_hist[k]
                if hit:
                    out.add(v)
                    break
        return frozenset(out)

    def _components(self, lev, edges, tags, v_set):
        g_lev = self.sys.level(lev)
        parent = {e: e for e in edges}

        def find(e):
            while parent[e] != e:
                parent[e] = parent[parent[e]]
                e = parent[e]
            return e

        by_vertex = {}
        for e in edges:
            for v in g_lev.edges[e]:
                if v not in v_set:
                    by_vertex.setdefault(v, []).append(e)
        for es in by_vertex.values():
            root = find(es[0])
            for x in es[1:]:
                parent[find(x)] = root
        groups = {}
        for e in edges:
            groups.setdefault(find(e), []).append(e)
        comps = tuple(tuple(sorted(c))
                      for c in sorted(groups.values(), key=min))
        purity = True
        for comp in comps:
            kinds = {tags[e] for e in comp}
            if len(kinds) > 1:
                purity = False
            elif kinds != {"monotone-component"} and len(comp) > 1:
                purity = False
        return comps, purity

    def _check_ii(self, lev, edges) -> bool:
        """Adjacent same-column pairs must descend from a past defect."""
        if lev <= self.n0:
            return True
        g_lev = self.sys.level(lev)
        m = self.sys.data.m
        by_v = {}
        for e in edges:
            for v in g_lev.edges[e]:
                by_v.setdefault(v, []).append(e)
        for v, es in by_v.items():
            cols = {}
            for e in es:
                cols.setdefault(g_lev.columns[e], []).append(e)
            for _c, pair in cols.items():
                if len(pair) < 2:
                    continue
                q = g_lev.pi0v[v]
                ok = False
                for k in range(self.n0, lev):
                    if (q * m ** (k + 1)).denominator != 1:
                        continue
                    if not self.large_hist.get(k):
                        continue
                    ancs = {self._anc_edge(lev, e, k) for e in pair}
                    if len(ancs) == 1 and next(iter(ancs)) in self.large_hist[k]:
                        ok = True
                        break
                if not ok:
                    return False
        return True

    def _check_iii(self, lev, edges) -> bool:
        g_lev = self.sys.level(lev)
        seen = {}
        for e in edges:
            key = tuple(sorted(g_lev.edges[e]))
            if key in seen:
                f = seen[key]
                pe = self.sys.edge_parent(lev, e)[0]
                pf = self.sys.edge_parent(lev, f)[0]
                if pe != pf or pe not in self.large_hist.get(lev - 1, ()):
                    return False
            else:
                seen[key] = e
        return True

    def _check_i(self, prev: StageSet, rec: StageSet) -> bool:
        """Edges swapped between stages must be flat with a unique flat
        same-column twin present at the coarser stage."""
        g_n = self.sys.level(prev.level)
        proj = {self.sys.edge_parent(rec.level, e)[0] for e in rec.edges}
        sym = proj ^ set(prev.edges)
        for e in sorted(sym):
            res = classify_edge(self.sys, self.E, prev.level, e, self.params,
                                root=(prev.level == self.n0),
                                _beta=self._cube(prev.level, e).beta)
            if res.verdict != "good":
                return False
            twins = [f for f in prev.edges
                     if f != e and g_n.columns[f] == g_n.columns[e]
                     and f in prev.good]
            if len(twins) != 1:
                return False
        return True


# -- stage transitions --------------------------------------------------------


def _sub_piece(p: Piece, i0: int, i1: int, s: Fraction) -> Piece:
    return Piece(p.lo + i0 * s, p.lo + i1 * s, p.path[i0:i1])


def lift_stage(state: ConstructionState) -> StageSet:
    """Advance the working lift one level and classify the new stage.

    Transforms the pieces according to the previous stage's tags, checks
    the seams inside replaced runs, then classifies the resulting edge
    set and verifies the stage invariants against the previous record.
    """
    sys, params = state.sys, state.params
    n = state.stage
    N = params.depth
    if n >= N:
        raise InputError("structure already at the working depth")
    prev = state.records[-1]
    state._check_coverage()

    comp_of = {}
    for ci, comp in enumerate(prev.components):
        for e in comp:
            comp_of[e] = ci
    owners = {}
    for e in prev.edges:
        t = prev.tags[e]
        if t == "large-beta":
            owners[e] = ("71", e)
        elif t == "recently-large":
            owners[e] = ("72", e)
        else:
            owners[e] = ("comp", comp_of[e])

    tab = state._table(n) if n < N else None
    img_cache = {}

    def image(e_deep):
        r = img_cache.get(e_deep)
        if r is None:
            r = tab.edge_image(e_deep)[0] if tab is not None else e_deep
            img_cache[e_deep] = r
        return r

    grouped: Dict[Tuple, List[Piece]] = {}
    for p in state.pieces:
        start = 0
        cur = owners[image(p.path[0])]
        for i in range(1, len(p.path)):
            o = owners[image(p.path[i])]
            if o != cur:
                grouped.setdefault(cur, []).append(
                    _sub_piece(p, start, i, state.s))
                start, cur = i, o
        grouped.setdefault(cur, []).append(
            _sub_piece(p, start, len(p.path), state.s))

    new_pieces: List[Piece] = []
    seams = []
    for e in sorted(prev.edges):
        t = prev.tags[e]
        if t == "large-beta":
            lifts = state._s_lift(n, e)
            g_c = sys.level(n + 1)
            for child in sorted(lifts):
                lo_c, hi_c = _edge_span(g_c, child)
                new_pieces.append(Piece(lo_c, hi_c, lifts[child]))
        elif t == "recently-large":
            kept = grouped.get(("72", e), [])
            if not kept:
                raise InternalConsistencyError(
                    "no stored lift over a recently defective edge",
                    witness=(n, e))
            new_pieces.extend(kept)
    for ci, comp in enumerate(prev.components):
        if prev.tags[comp[0]] != "monotone-component":
            continue
        new_pieces.extend(_replace_component(
            state, n, prev, comp, grouped.get(("comp", ci), []), seams))

    seam_ok = _check_seams(state, n, seams)
    state.pieces = sorted(new_pieces, key=lambda p: (p.lo, p.hi, p.path))
    state._check_coverage()

    rec = state._classify_stage(n + 1)
    state.stage = n + 1
    state.records.append(rec)
    rec.checks["good-run-seams"] = seam_ok
    rec.checks["edge-swap"] = state._check_i(prev, rec)
    return rec


def _replace_component(state, n, prev, comp, old_pieces, seams) -> List[Piece]:
    """Rebuild one flat component: minimax geodesics over its good runs,
    kept lifts elsewhere."""
    sys = state.sys
    N = state.params.depth
    if n + 2 > N:
        return old_pieces  # splice grid finer than the working depth
    g_n = sys.level(n)
    sc = g_n.scale
    cols: Dict[int, List[int]] = {}
    for e in comp:
        cols.setdefault(g_n.columns[e], []).append(e)
    col_ids = sorted(cols)
    if col_ids != list(range(col_ids[0], col_ids[-1] + 1)):
        raise InternalConsistencyError(
            "component is not an interval of columns", witness=tuple(comp))
    good_col = {c: any(e in prev.good for e in cols[c]) for c in col_ids}

    replaced = []
    c = col_ids[0]
    while c <= col_ids[-1]:
        if not good_col[c]:
            c += 1
            continue
        c1 = c
        while c1 + 1 <= col_ids[-1] and good_col[c1 + 1]:
            c1 += 1
        if c == col_ids[0]:
            a = c * sc
        else:
            rep = min(e for e in cols[c] if e in prev.good)
            sp = special_vertices(sys, state.E, n, rep, n + 1)
            a = min(sp) if sp else c * sc
        if c1 == col_ids[-1]:
            b = (c1 + 1) * sc
        else:
            rep = min(e for e in cols[c1] if e in prev.good)
            sp = special_vertices(sys, state.E, n, rep, n + 1)
            b = max(sp) if sp else (c1 + 1) * sc
        if a < b:
            replaced.append((a, b))
        c = c1 + 1

    out: List[Piece] = []
    m_pow = sys.data.m ** (N - n)
    for (a, b) in replaced:
        c0, c1 = int(a / state.s), int(b / state.s)
        allow = {}
        for cN in range(c0, c1):
            cn = cN // m_pow
            es = frozenset().union(*[state._desc(n, e2) for e2 in cols[cn]])
            allow[cN] = es
        fn = allow.get
        cost = state._window_cost(list(state.E.points), c0, c1 - 1, fn)
        _v, path = _window_dp(state.g, range(c0, c1), cost, fn)
        out.append(Piece(a, b, tuple(path)))

    comp_lo, comp_hi = col_ids[0] * sc, (col_ids[-1] + 1) * sc
    keep_iv = []
    cur = comp_lo
    for (a, b) in replaced:
        if a > cur:
            keep_iv.append((cur, a))
        cur = b
    if cur < comp_hi:
        keep_iv.append((cur, comp_hi))
    kept: List[Piece] = []
    for p in old_pieces:
        for (klo, khi) in keep_iv:
            qlo, qhi = max(p.lo, klo), min(p.hi, khi)
            if qlo < qhi:
                kept.append(p.cut(qlo, qhi, state.s))
    out.extend(kept)

    g = state.g
    for idx, (a, b) in enumerate(replaced):
        new_p = out[idx]
        if a > comp_lo:
            zls = [g.edges[p.path[-1]][1] for p in kept if p.hi == a and p.path]
            seams.append((a, zls, g.edges[new_p.path[0]][0]))
        if b < comp_hi:
            zrs = [g.edges[p.path[0]][0] for p in kept if p.lo == b and p.path]
            seams.append((b, zrs, g.edges[new_p.path[-1]][1]))
    return out


def _check_seams(state, n, seams) -> bool:
    """Where a replacement meets a kept lift, both tracks must agree two
    levels below the stage; for a small threshold a disagreement is a
    hard internal error, otherwise the seam becomes a repairable break."""
    sys = state.sys
    N = state.params.depth
    lev = min(n + 2, N)
    g_lev = sys.level(lev)
    m = sys.data.m
    threshold = Fraction(1, m ** 2) / (4 * state.params.a_mult)
    ok = True
    for (q, zs, z_new) in seams:
        if not zs or z_new in zs:
            continue
        key_new = g_lev.canonical_key(
            sys.project_point(N, lev, state.g.vertex_point(z_new)))
        agree = any(
            g_lev.canonical_key(
                sys.project_point(N, lev, state.g.vertex_point(z))) == key_new
            for z in zs)
        if agree:
            continue
        if state.params.epsilon < threshold:
            raise InternalConsistencyError(
                "replacement seam separates below the splice grid",
                witness=(n, q, tuple(zs), z_new))
        ok = False
    return ok


# -- connection pass ----------------------------------------------------------


def connect_stage(state: ConstructionState) -> dict:
    """Reconnect the working structure after a stage transition.

    Each disconnection is charged to the deepest defective region whose
    edge holds both break shadows, or failing that to a corridor along a
    flat-but-bad edge far from the cloud; fiber-width leftovers count as
    re-lifts.  Records budget checks on the stage record.
    """
    sys, params = state.sys, state.params
    nn = state.stage
    m = sys.data.m
    rec = state.records[-1]
    ledger = state.ledger
    line = {"stage": nn, "c1": 0, "c2": 0, "relift": 0}
    guard = 0
    while True:
        comp = _structure_components(state)
        if len(set(comp.values())) <= 1:
            break
        guard += 1
        if guard > 3 * len(state.pieces) + 8:
            raise InternalConsistencyError(
                "connection pass failed to converge", witness=nn)
        z1, z2, edge_path = _nearest_break(state, comp)
        length = len(edge_path) * state.s
        route = _route_break(state, z1, z2)
        if route is None:
            bound = sys.c_eta() * Fraction(1, m ** max(nn - 1, 0))
            if length <= bound:
                ledger.relifts.append(ReliftRecord(nn, (z1, z2), length))
                line["relift"] += 1
            else:
                raise InternalConsistencyError(
                    "unroutable break", witness=(nn, z1, z2))
        elif route[0] == "c2":
            _lev, _eid = route[1], route[2]
            state._cube(_lev, _eid)
            ledger.c2.append(C2Record(nn, _lev, _eid, (z1, z2), length))
            line["c2"] += 1
        else:
            _kind, lev, f, arc = route
            tkey = (lev, f, arc[0], arc[1])
            tr = ledger.t_records.get(tkey)
            if tr is None:
                track = state._edge_track(lev, f)
                i0 = int(arc[0] / state.s)
                i1 = int(arc[1] / state.s)
                tr = TRecord(lev, f, arc[0], arc[1], track[i0:i1])
                ledger.t_records[tkey] = tr
                state.connectors.append(("corridor", tr.path))
            tr.uses += 1
            ledger.c1.append(C1Record(nn, tkey, (z1, z2), length))
            line["c1"] += 1
        state.connectors.append(("join", tuple(edge_path)))
    rec.checks["connected"] = True

    delta = sys.data.delta
    t_cap = 12 * delta * delta + 8
    uses_ok = all(tr.uses <= t_cap for tr in ledger.t_records.values())
    mult: Dict[int, int] = {}
    for tr in ledger.t_records.values():
        for e in tr.path:
            mult[e] = mult.get(e, 0) + 1
    n_eta = 1 + log(20 * float(sys.c_eta()) * m) / log(m)
    overlap_ok = all(v <= int(n_eta) for v in mult.values())
    c2_tot: Dict[Tuple[int, int], Fraction] = {}
    for r in ledger.c2:
        k = (r.cube_level, r.cube_edge)
        c2_tot[k] = c2_tot.get(k, Fraction(0)) + r.length
    c2_ok = all(tot <= 100 * state._cube(lv, e).diam
                for (lv, e), tot in c2_tot.items())
    relift_ok = all(
        r.length <= 4 * sys.c_eta() * Fraction(1, m ** max(r.stage - 1, 0))
        for r in ledger.relifts)
    line["ok"] = uses_ok and overlap_ok and c2_ok and relift_ok
    rec.checks["budgets"] = line["ok"]
    ledger.stage_lines.append(line)
    return line


def _structure_components(state) -> Dict[int, int]:
    edges = state.structure_edges()
    comp: Dict[int, int] = {}
    adj: Dict[int, List[int]] = {}
    for e in edges:
        a, b = state.g.edges[e]
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    cid = 0
    for v0 in sorted(adj):
        if v0 in comp:
            continue
        stack = [v0]
        comp[v0] = cid
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in comp:
                    comp[w] = cid
                    stack.append(w)
        cid += 1
    return comp


def _nearest_break(state, comp) -> Tuple[int, int, Tuple[int, ...]]:
    """Breadth-first search from the least component to the nearest
    foreign structure vertex, over the admissible subgraph."""
    g = state.g
    start_cid = comp[min(comp)]
    prev: Dict[int, Optional[Tuple[int, int]]] = {
        v: None for v in comp if comp[v] == start_cid}
    frontier = sorted(prev)
    while frontier:
        nxt = []
        for v in frontier:
            for eid in sorted(g.adj[v]):
                if state.allowed is not None and eid not in state.allowed:
                    continue
                w = g.other_end(eid, v)
                if w in prev:
                    continue
                prev[w] = (v, eid)
                if w in comp and comp[w] != start_cid:
                    path = []
                    cur = w
                    while prev[cur] is not None:
                        pv, pe = prev[cur]
                        path.append(pe)
                        cur = pv
                    path.reverse()
                    return cur, w, tuple(path)
                nxt.append(w)
        frontier = sorted(nxt)
    raise InternalConsistencyError(
        "structure disconnected beyond the admissible subgraph",
        witness=start_cid)


def _route_break(state, z1: int, z2: int):
    """Pick the charge for one repair: the deepest defective stage edge
    holding both break shadows, else a corridor arc on a flat-but-bad
    edge near the break, searched from the finest usable level up."""
    sys = state.sys
    N = state.params.depth
    nn = state.stage
    g = state.g
    for i in range(min(nn, N - 1), state.n0 - 1, -1):
        if not state.large_hist.get(i):
            continue
        g_i = sys.level(i)
        p1 = sys.project_point(N, i, g.vertex_point(z1))
        p2 = sys.project_point(N, i, g.vertex_point(z2))
        for f in sorted(state.large_hist[i]):
            if _on_edge(g_i, f, p1) and _on_edge(g_i, f, p2):
                return ("c2", i, f)
    m = sys.data.m
    t = 1
    while m ** t < 16:
        t += 1
    for lev in range(min(nn - 1, N - t), state.n0 - 1, -1):
        idx = lev - state.n0
        if idx < 0 or idx >= len(state.records):
            continue
        rec = state.records[idx]
        g_lev = sys.level(lev)
        zp = sys.project_point(N, lev, g.vertex_point(z1))
        cands = []
        for e in rec.edges:
            if e in rec.good or rec.beta[e] >= state.params.epsilon:
                continue
            d = g_lev.point_to_segments(
                zp, SegmentSet.full_edges(g_lev, [e]))
            if d <= 2 * g_lev.scale:
                cands.append((d, e))
        for _d, e in sorted(cands):
            arc = _find_arc(state, lev, e, t)
            if arc is not None:
                return ("c1", lev, e, arc)
    return None


def _find_arc(state, lev: int, eid: int, t: int):
    """A short sub-arc of eid whose distance to the cloud lands in the
    corridor window; arcs at one level never overlap."""
    sys = state.sys
    m = sys.data.m
    g_lev = sys.level(lev)
    sc = g_lev.scale
    sub = sc / m ** t
    cells = -(-m ** t // 10)
    width = cells * sub
    lo_w = sc / 10
    hi_w = sys.c_eta() * m * sc
    taken = [(tr.lo, tr.hi) for (l2, f2, _a, _b), tr
             in state.ledger.t_records.items() if l2 == lev and f2 == eid]
    shadows = [x.at(lev) for x in state.E.points]
    for k in range(m ** t - cells + 1):
        a_off = k * sub
        b_off = a_off + width
        if any(not (b_off <= lo2 or a_off >= hi2) for (lo2, hi2) in taken):
            continue
        seg = SegmentSet.merged(g_lev, [(eid, a_off, b_off)])
        dmin = min(g_lev.point_to_segments(p, seg) for p in shadows)
        if lo_w <= dmin <= hi_w:
            return (a_off, b_off)
    return None


# -- the full run -------------------------------------------------------------


def run_proposition(sys: InverseSystem, E, n0: int, root_edge: int,
                    params: ConstructionParams, threads: int = 1) -> RunResult:
    """Build a connected curve through the part of the cloud over one
    root edge and certify every promised property of the output."""
    if not isinstance(E, PointCloud):
        E = perturb_cloud(sys, E, params.depth)
    state = ConstructionState(sys, E, n0, root_edge, params, threads)
    while state.stage < params.depth:
        lift_stage(state)
        connect_stage(state)
    return _finish_run(state)


def _finish_run(state: ConstructionState) -> RunResult:
    sys, params = state.sys, state.params
    N = params.depth
    edges = sorted(state.structure_edges())
    gamma = Curve(sys, N, edges)
    seen, q_list = set(), []
    for (lev, _e), rec in sorted(state.cube_memo.items()):
        if not rec.in_gamma:
            continue
        k = (lev, rec.key)
        if k in seen:
            continue
        seen.add(k)
        q_list.append(rec)
    large_sum = sum((r.diam for r in q_list if r.large), Fraction(0))
    remainders = _remainders(state, gamma)
    cert = _certificates(state, gamma, q_list, remainders, large_sum)
    return RunResult(gamma, q_list, remainders, cert, state.records,
                     state.ledger, large_sum, state.n0, state.root_edge)


def _coverage(state, n: int) -> Dict[int, List[Tuple[Fraction, Fraction]]]:
    """Base intervals of each level-n edge covered by the final
    structure, connectors included, merged per edge."""
    sys = state.sys
    N = state.params.depth
    g_n = sys.level(n)
    sc = g_n.scale
    tab = state._table(n) if n < N else None
    cov: Dict[int, List[Tuple[Fraction, Fraction]]] = {}

    def add(eid, lo, hi):
        cov.setdefault(eid, []).append((lo, hi))

    for p in state.pieces:
        c0 = int(p.lo / sc)
        c1 = int((p.hi - state.s) / sc)
        for col in range(c0, c1 + 1):
            qlo = max(p.lo, col * sc)
            qhi = min(p.hi, (col + 1) * sc)
            e_deep = p.path[int((qlo - p.lo) / state.s)]
            f = tab.edge_image(e_deep)[0] if tab is not None else e_deep
            add(f, qlo, qhi)
    for _kind, path in state.connectors:
        for e_deep in path:
            if tab is None:
                f, off = e_deep, Fraction(0)
            else:
                f, off = tab.edge_image(e_deep)
            lo_f = _edge_span(g_n, f)[0]
            add(f, lo_f + off, lo_f + off + state.s)
    merged = {}
    for eid, ivs in cov.items():
        ivs.sort()
        acc = [list(ivs[0])]
        for lo, hi in ivs[1:]:
            if lo <= acc[-1][1]:
                acc[-1][1] = max(acc[-1][1], hi)
            else:
                acc.append([lo, hi])
        merged[eid] = [(lo, hi) for lo, hi in acc]
    return merged


def _remainders(state: ConstructionState, gamma: Curve) -> List[RemainderPiece]:
    sys, params = state.sys, state.params
    N, n0 = params.depth, state.n0
    m = sys.data.m
    segs = SegmentSet.full_edges(state.g, gamma.edges)
    collected: Dict[Tuple[int, int], set] = {}
    order: List[Tuple[int, int]] = []
    out: List[RemainderPiece] = []
    for n in range(n0 + 2, N + 1):
        cov = _coverage(state, n)
        g_n = sys.level(n)
        gap = Fraction(1, m ** n)
        det: Dict[int, List[int]] = {}
        for idx, x in enumerate(state.E.points):
            q = state.E_q[idx]
            p_n = x.at(n)
            dvn = _LazyDV(g_n, p_n)
            best = None
            for f, ivs in cov.items():
                inside = any(lo <= q <= hi for lo, hi in ivs)
                if not inside:
                    continue
                lo_f = _edge_span(g_n, f)[0]
                d = _fiber_dist(g_n, p_n, dvn, f, q - lo_f)
                if best is None or d < best:
                    best = d
            if best is None or best >= gap:
                det.setdefault(p_n.edge, []).append(idx)
        for f in sorted(det):
            # points under an edge already returned at a coarser level are
            # folded into that piece, so nothing detected is ever dropped
            anc, owner = f, None
            for lv in range(n, n0 + 2, -1):
                anc = sys.edge_parent(lv, anc)[0]
                if (lv - 1, anc) in collected:
                    owner = (lv - 1, anc)
                    break
            if owner is not None:
                collected[owner].update(det[f])
                continue
            collected[(n, f)] = set(det[f])
            order.append((n, f))
    for (n, f) in order:
        idxs = sorted(collected[(n, f)])
        pts = PointCloud(tuple(state.E.points[i] for i in idxs))
        dist = min(state.g.point_to_segments(state.E_N[i], segs)
                   for i in idxs)
        diam = Fraction(0)
        for i in idxs:
            for j in idxs:
                if j <= i:
                    continue
                d = _fiber_dist(state.g, state.E_N[i],
                                state._dv(state.E_N[i]),
                                state.E_N[j].edge, state.E_N[j].offset)
                if d > diam:
                    diam = d
        out.append(RemainderPiece(n, f, pts, dist, diam))
    return out


def _certificates(state, gamma, q_list, remainders, large_sum) -> List[CertLine]:
    sys, params = state.sys, state.params
    N, n0 = params.depth, state.n0
    m = sys.data.m
    c_eta = sys.c_eta()
    lines: List[CertLine] = []
    base = 2 * Fraction(1, m ** n0)

    if large_sum > 0:
        cx = max(Fraction(0), (gamma.length - base) / large_sum)
        lines.append(CertLine("length-bound", True, cx, None,
                              "measured multiplier over the defect sum"))
    else:
        lines.append(CertLine("length-bound", gamma.length <= base,
                              gamma.length, base,
                              "no defects, absolute bound"))

    try:
        state._check_coverage()
        cov_ok = True
    except InternalConsistencyError:
        cov_ok = False
    if state.allowed is not None:
        cov_ok = cov_ok and all(e in state.allowed
                                for e in state.structure_edges())
    lines.append(CertLine("base-coverage", cov_ok, None, None,
                          "structure spans the root edge"))

    cube_ok = all(state._anc_edge(r.level, r.edge, n0) == state.root_edge
                  for r in q_list)
    lines.append(CertLine("cube-containment", cube_ok, None, None,
                          "every charged region descends from the root"))

    shape_ok, worst = True, Fraction(0)
    for rem in remainders:
        # a cluster fits inside one edge preimage: base span plus fiber
        bound = (1 + c_eta) * Fraction(1, m ** rem.level)
        if rem.diam > bound:
            shape_ok = False
        if bound > 0:
            worst = max(worst, rem.diam / bound)
        for r in q_list:
            if r.level >= rem.level and state._anc_edge(
                    r.level, r.edge, rem.level) == rem.edge:
                shape_ok = False
    lines.append(CertLine("remainder-shape", shape_ok, worst, Fraction(1),
                          "diameter within one coarse edge preimage, no "
                          "charged region below a returned edge"))

    nest_ok = True
    for ra in remainders:
        for rb in remainders:
            if ra.level < rb.level and state._anc_edge(
                    rb.level, rb.edge, ra.level) == ra.edge:
                nest_ok = False
    lines.append(CertLine("remainder-no-nesting", nest_ok, None, None,
                          "returned edges form an antichain"))

    near_ok, worst_d = True, Fraction(0)
    for rem in remainders:
        bound = c_eta * Fraction(1, m ** (rem.level - 1))
        if rem.dist > bound:
            near_ok = False
        worst_d = max(worst_d, rem.dist)
    lines.append(CertLine("remainder-near", near_ok, worst_d, None,
                          "each returned cluster stays one coarse fiber "
                          "from the curve"))

    lhs = sum((Fraction(1, m ** rem.level) for rem in remainders), Fraction(0))
    denom = gamma.length / m ** 2 + large_sum
    if lhs == 0:
        lines.append(CertLine("remainder-count", True, Fraction(0), None, ""))
    elif denom > 0:
        lines.append(CertLine("remainder-count", True, lhs / denom, None,
                              "measured multiplier"))
    else:
        lines.append(CertLine("remainder-count", False, lhs, Fraction(0),
                              "returned edges with no structure to pay"))
    return lines


# -- the full builder ---------------------------------------------------------


def _cloud_diam(state_g, pts_N, dv_fn) -> Fraction:
    best = Fraction(0)
    for i, p in enumerate(pts_N):
        dv = dv_fn(p)
        for j in range(i + 1, len(pts_N)):
            d = _fiber_dist(state_g, p, dv, pts_N[j].edge, pts_N[j].offset)
            if d > best:
                best = d
    return best


def build_curve(sys: InverseSystem, E, params: ConstructionParams,
                threads: int = 1) -> BuildResult:
    """Connected curve through the whole cloud.

    Groups the cloud at the scale of its diameter, runs the stage
    machine inside each root edge, recurses on whatever each run hands
    back, and joins the resulting parts.  The report carries the length
    accounting, the containment check, and the aggregated stage checks.
    """
    if not isinstance(E, PointCloud):
        E = perturb_cloud(sys, E, params.depth)
    N = params.depth
    g = sys.level(N)
    m = sys.data.m
    dv_cache: Dict[object, list] = {}

    def dv_of(p):
        k = g.canonical_key(p)
        if k not in dv_cache:
            dv_cache[k] = _LazyDV(g, p)
        return dv_cache[k]

    def pick_root(cloud) -> int:
        pts_N = [x.at(N) for x in cloud.points]
        diam = _cloud_diam(g, pts_N, dv_of)
        if diam == 0:
            return N
        n = 0
        while n + 1 <= N and diam <= Fraction(1, m ** (n + 1)):
            n += 1
        return n

    runs: List[RunResult] = []
    parts: List[FrozenSet[int]] = []
    residuals = 0
    truncated = 0
    sub_params = ConstructionParams(params.epsilon, params.a_mult, N, None)

    root_level = params.n0 if params.n0 is not None else pick_root(E)
    full_diam = _cloud_diam(g, [x.at(N) for x in E.points], dv_of)
    queue: List[Tuple[PointCloud, Optional[int], int]] = [(E, None, root_level)]
    guard = 0
    while queue:
        cloud, floor_lv, n_root = queue.pop(0)
        guard += 1
        force_direct = guard > 4 * len(E.points) + 16
        if floor_lv is not None and n_root <= floor_lv:
            force_direct = True  # no finer-scale progress possible
        if force_direct or n_root >= N - 1 or len(cloud.points) == 1:
            parts.append(frozenset(x.at(N).edge for x in cloud.points))
            residuals += 1
            if force_direct and len(cloud.points) > 1:
                truncated += 1
            continue
        groups: Dict[int, List[LimitPoint]] = {}
        for x in cloud.points:
            groups.setdefault(x.at(n_root).edge, []).append(x)
        for eid in sorted(groups):
            sub = PointCloud(tuple(groups[eid]))
            if len(sub.points) == 1:
                parts.append(frozenset(x.at(N).edge for x in sub.points))
                residuals += 1
                continue
            res = run_proposition(sys, sub, n_root, eid, sub_params, threads)
            runs.append(res)
            parts.append(frozenset(res.gamma.edges))
            for rem in res.remainders:
                queue.append((rem.points, rem.level, pick_root(rem.points)))

    all_edges = set()
    for part in parts:
        all_edges.update(part)
    joins: List[Fraction] = []
    while True:
        comp: Dict[int, int] = {}
        adj: Dict[int, List[int]] = {}
        for e in all_edges:
            a, b = g.edges[e]
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        cid = 0
        for v0 in sorted(adj):
            if v0 in comp:
                continue
            stack = [v0]
            comp[v0] = cid
            while stack:
                v = stack.pop()
                for w in adj[v]:
                    if w not in comp:
                        comp[w] = cid
                        stack.append(w)
            cid += 1
        if cid <= 1:
            break
        start_cid = comp[min(comp)]
        prev: Dict[int, Optional[Tuple[int, int]]] = {
            v: None for v in comp if comp[v] == start_cid}
        frontier = sorted(prev)
        hit = None
        while frontier and hit is None:
            nxt = []
            for v in frontier:
                for eid in sorted(g.adj[v]):
                    w = g.other_end(eid, v)
                    if w in prev:
                        continue
                    prev[w] = (v, eid)
                    if w in comp and comp[w] != start_cid:
                        hit = w
                        break
                    nxt.append(w)
                if hit is not None:
                    break
            frontier = sorted(nxt)
        if hit is None:
            raise InternalConsistencyError("parts cannot be joined",
                                           witness=start_cid)
        cur, path = hit, []
        while prev[cur] is not None:
            pv, pe = prev[cur]
            path.append(pe)
            cur = pv
        all_edges.update(path)
        joins.append(len(path) * g.scale)

    curve = Curve(sys, N, sorted(all_edges))
    segs = SegmentSet.full_edges(g, curve.edges)
    worst = Fraction(0)
    for x in E.points:
        d = g.point_to_segments(x.at(N), segs)
        if d > worst:
            worst = d
    bound = sys.c_eta() * g.scale
    containment = {"passed": worst <= bound, "max_dist": worst,
                   "bound": bound,
                   "limit_bound": (1 + sys.c_eta()) * g.scale}

    seen_keys = set()
    large_total = Fraction(0)
    dup_keys = False
    for run in runs:
        for r in run.q_gamma:
            k = (r.level, r.key)
            if k in seen_keys:
                dup_keys = True
                continue
            seen_keys.add(k)
            if r.large:
                large_total += r.diam
    stage_ok = all(all(r.checks.values()) for run in runs for r in run.stages)
    cert_ok = all(line.passed for run in runs for line in run.cert)
    budget_ok = all(l["ok"] for run in runs for l in run.ledger.stage_lines)

    report = {
        "root_level": root_level,
        "length": curve.length,
        "diam": full_diam,
        "large_sum": large_total,
        "containment": containment,
        "joins": joins,
        "residual_parts": residuals,
        "truncated_parts": truncated,
        "checks": {
            "stage_invariants": stage_ok and cert_ok,
            "budgets": budget_ok,
            "cube_disjointness": not dup_keys,
        },
        "scale_skip": sys.scale_skip_report()["smallest_adequate_K"],
    }
    return BuildResult(curve, report, runs)
