"""Rule-generated towers of metric graphs with simplicial projections.

A tower starts from the unit interval (one edge, two vertices) and each
level is produced from the previous one by a replacement rule.  The rule
returns, along with the new graph, a parent table assigning every new edge
to one of the m sub-edges of its parent edge, and an image point for every
new vertex.  Everything downstream (projections, lifts, fibers, the axiom
validator) is derived from those tables, so user-defined rules get the
whole machinery for free.

Two built-in rules:

* ``diamond``: every edge is replaced by a six-edge template whose middle
  two sub-edges run through a pair of parallel branch vertices (m = 4).
* ``laakso``: the graph is bisected and doubled, the two copies glued at
  the new midpoint vertices (m = 2).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import InputError, ParseError, ResourceError
from .fracs import format_fraction, parse_fraction
from .metric_graph import GraphPoint, MetricGraph, path_vertices

DEFAULT_EDGE_BUDGET = 2_000_000
BUDGET_ENV_VAR = "LAAKSO_TST_BUDGET"


def edge_budget() -> int:
    raw = os.environ.get(BUDGET_ENV_VAR)
    if raw is None:
        return DEFAULT_EDGE_BUDGET
    try:
        val = int(raw)
    except ValueError:
        raise InputError(f"{BUDGET_ENV_VAR} must be an integer, got {raw!r}")
    if val <= 0:
        raise InputError(f"{BUDGET_ENV_VAR} must be positive")
    return val


@dataclass(frozen=True)
class SystemData:
    """Scale factor per level, fiber-diameter constant, valence bound."""

    m: int
    eta: Fraction
    delta: int

    def __post_init__(self):
        if self.m < 2:
            raise InputError("m must be >= 2")
        if self.delta < 2:
            raise InputError("delta must be >= 2")
        object.__setattr__(self, "eta", Fraction(self.eta))
        if self.eta <= 0:
            raise InputError("eta must be > 0")


@dataclass(frozen=True)
class ReplacementTemplate:
    """Per-edge replacement graph on template coordinates [0, 1].

    `coords[i]` is the relative base coordinate of template vertex i; the
    template must contain the glue vertices at 0 and 1.  Each template edge
    is (v_lo, v_hi, sub, child_label) and spans sub-interval
    [sub/m, (sub+1)/m].  `check=False` skips well-formedness (used to build
    deliberately broken rules for validator tests).
    """

    m: int
    coords: Tuple[Fraction, ...]
    tedges: Tuple[Tuple[int, int, int, str], ...]
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, "coords",
                           tuple(Fraction(c) for c in self.coords))
        object.__setattr__(self, "tedges",
                           tuple((int(a), int(b), int(s), str(lab))
                                 for a, b, s, lab in self.tedges))
        if not self.check:
            return
        unit = Fraction(1, self.m)
        if Fraction(0) not in self.coords or Fraction(1) not in self.coords:
            raise InputError("template must contain glue vertices at 0 and 1")
        for c in self.coords:
            if c < 0 or c > 1 or (c / unit).denominator != 1:
                raise InputError(f"template coordinate {c} not on the grid")
        seen_subs = set()
        for a, b, sub, _lab in self.tedges:
            if not (0 <= a < len(self.coords) and 0 <= b < len(self.coords)):
                raise InputError("template edge endpoint out of range")
            lo, hi = self.coords[a], self.coords[b]
            if hi - lo != unit:
                raise InputError(
                    f"template edge ({a},{b}) spans {hi - lo}, want {unit}")
            if lo != sub * unit:
                raise InputError(
                    f"template edge ({a},{b}) claims sub {sub} but sits at {lo}")
            seen_subs.add(sub)
        if seen_subs != set(range(self.m)):
            raise InputError("template does not cover all sub-intervals")

    @property
    def interior_ids(self) -> List[int]:
        return [i for i, c in enumerate(self.coords) if 0 < c < 1]


class LevelStep:
    """Output of one application of a rule: graph plus projection tables."""

    def __init__(self, graph: MetricGraph,
                 edge_parent: Sequence[Tuple[int, int]],
                 vertex_image: Sequence[GraphPoint],
                 edge_labels: Sequence[str]):
        self.graph = graph
        self.edge_parent = tuple(edge_parent)      # child edge -> (edge, sub)
        self.vertex_image = tuple(vertex_image)    # child vertex -> parent pt
        self.edge_labels = tuple(edge_labels)


class ReplacementRule:
    """Applies a per-label template to every edge of the previous level."""

    def __init__(self, templates: Dict[str, ReplacementTemplate],
                 root_label: str = "default"):
        if root_label not in templates:
            raise InputError(f"missing template for root label {root_label!r}")
        self.templates = dict(templates)
        self.root_label = root_label
        ms = {t.m for t in templates.values()}
        if len(ms) != 1:
            raise InputError("all templates must share one m")
        self.m = ms.pop()

    @property
    def edges_per_edge(self) -> int:
        return max(len(t.tedges) for t in self.templates.values())

    def next_level(self, g: MetricGraph, labels: Sequence[str]) -> LevelStep:
        pi0v = list(g.pi0v)
        vertex_image = [g.vertex_point(v) for v in range(g.num_vertices)]
        new_edges = []
        edge_parent = []
        edge_labels = []
        for eid, (a, b) in enumerate(g.edges):
            tpl = self.templates.get(labels[eid])
            if tpl is None:
                raise InputError(f"no template for edge label {labels[eid]!r}")
            local = {}
            for tv, c in enumerate(tpl.coords):
                if c == 0:
                    local[tv] = a
                elif c == 1:
                    local[tv] = b
                else:
                    local[tv] = len(pi0v)
                    pi0v.append(g.pi0v[a] + c * g.scale)
                    vertex_image.append(GraphPoint(eid, c * g.scale))
            for (ta, tb, sub, lab) in tpl.tedges:
                new_edges.append((local[ta], local[tb]))
                edge_parent.append((eid, sub))
                edge_labels.append(lab)
        child = MetricGraph(g.level + 1, g.m, pi0v, new_edges)
        return LevelStep(child, edge_parent, vertex_image, edge_labels)


class GluedDoublingRule:
    """Bisect every edge, take two copies, glue at the bisection vertices."""

    m = 2
    edges_per_edge = 4

    def next_level(self, g: MetricGraph, labels: Sequence[str]) -> LevelStep:
        nv = g.num_vertices
        half = g.scale / 2
        pi0v = []
        vertex_image = []
        # copies of old vertices: ids 2*v + copy
        for v in range(nv):
            for _copy in (0, 1):
                pi0v.append(g.pi0v[v])
                vertex_image.append(g.vertex_point(v))
        # shared midpoint vertices: ids 2*nv + eid
        for eid in range(g.num_edges):
            pi0v.append(g.pi0v[g.edges[eid][0]] + half)
            vertex_image.append(GraphPoint(eid, half))
        new_edges = []
        edge_parent = []
        edge_labels = []
        for eid, (a, b) in enumerate(g.edges):
            mid = 2 * nv + eid
            for copy in (0, 1):
                new_edges.append((2 * a + copy, mid))
                edge_parent.append((eid, 0))
                edge_labels.append(labels[eid])
                new_edges.append((mid, 2 * b + copy))
                edge_parent.append((eid, 1))
                edge_labels.append(labels[eid])
        child = MetricGraph(g.level + 1, g.m, pi0v, new_edges)
        return LevelStep(child, edge_parent, vertex_image, edge_labels)


def diamond_template() -> ReplacementTemplate:
    F = Fraction
    coords = [F(0), F(1, 4), F(1, 2), F(1, 2), F(3, 4), F(1)]
    tedges = [
        (0, 1, 0, "default"),
        (1, 2, 1, "default"),
        (1, 3, 1, "default"),
        (2, 4, 2, "default"),
        (3, 4, 2, "default"),
        (4, 5, 3, "default"),
    ]
    return ReplacementTemplate(4, coords, tedges)


class ProjectionTable:
    """Composed projection from level j down to level i <= j."""

    def __init__(self, sys: "InverseSystem", from_level: int, to_level: int):
        if to_level > from_level:
            raise InputError("projection must not increase the level")
        self.sys = sys
        self.from_level = from_level
        self.to_level = to_level
        gj = sys.level(from_level)
        self._vertex = [sys.project_point(from_level, to_level,
                                          gj.vertex_point(v))
                        for v in range(gj.num_vertices)]
        self._edge = []
        gi = sys.level(to_level)
        for eid in range(gj.num_edges):
            e_i = eid
            for lev in range(from_level, to_level, -1):
                e_i = sys.edge_parent(lev, e_i)[0]
            lo_child = gj.pi0v[gj.edges[eid][0]]
            lo_parent = gi.pi0v[gi.edges[e_i][0]]
            self._edge.append((e_i, lo_child - lo_parent))

    def vertex_image(self, v: int) -> GraphPoint:
        return self._vertex[v]

    def edge_image(self, eid: int) -> Tuple[int, Fraction]:
        """(edge at to_level, offset of the child edge's low end within it)."""
        return self._edge[eid]


class InverseSystem:
    """The tower, its caches, and every query derived from the rule."""

    def __init__(self, data: SystemData, rule, name: str = "custom",
                 max_edges: Optional[int] = None):
        self.data = data
        self.rule = rule
        self.name = name
        self.max_edges = max_edges
        base = MetricGraph(0, data.m, [Fraction(0), Fraction(1)], [(0, 1)])
        root_label = getattr(rule, "root_label", "default")
        self._graphs: List[MetricGraph] = [base]
        self._labels: List[Tuple[str, ...]] = [(root_label,)]
        self._edge_parent: List[Tuple[Tuple[int, int], ...]] = []
        self._vertex_image: List[Tuple[GraphPoint, ...]] = []
        self._children: List[Dict[Tuple[int, int], List[int]]] = []
        self._vertex_fiber: List[Dict[tuple, List[int]]] = []

    # -- construction ------------------------------------------------------

    def level(self, n: int) -> MetricGraph:
        if n < 0:
            raise InputError("level must be >= 0")
        while len(self._graphs) <= n:
            self._build_next()
        return self._graphs[n]

    def _build_next(self):
        g = self._graphs[-1]
        factor = getattr(self.rule, "edges_per_edge", None)
        budget = self.max_edges if self.max_edges is not None else edge_budget()
        if factor is not None and g.num_edges * factor > budget:
            raise ResourceError(
                f"level {g.level + 1} would need {g.num_edges * factor} edges,"
                f" budget is {budget}")
        step = self.rule.next_level(g, self._labels[-1])
        if step.graph.num_edges > budget:
            raise ResourceError(
                f"level {step.graph.level} has {step.graph.num_edges} edges,"
                f" budget is {budget}")
        self._graphs.append(step.graph)
        self._labels.append(step.edge_labels)
        self._edge_parent.append(step.edge_parent)
        self._vertex_image.append(step.vertex_image)
        children: Dict[Tuple[int, int], List[int]] = {}
        for ce, key in enumerate(step.edge_parent):
            children.setdefault(key, []).append(ce)
        self._children.append(children)
        fiber: Dict[tuple, List[int]] = {}
        for v, img in enumerate(step.vertex_image):
            fiber.setdefault(g.canonical_key(img), []).append(v)
        self._vertex_fiber.append(fiber)

    @property
    def built_levels(self) -> int:
        return len(self._graphs)

    # -- one-step tables ----------------------------------------------------

    def edge_parent(self, level: int, eid: int) -> Tuple[int, int]:
        """Parent (edge, sub) of an edge at `level` >= 1."""
        self.level(level)
        return self._edge_parent[level - 1][eid]

    def vertex_image(self, level: int, v: int) -> GraphPoint:
        self.level(level)
        return self._vertex_image[level - 1][v]

    def edge_children(self, level: int, eid: int, sub: int) -> List[int]:
        """Edges of level+1 projecting onto sub-edge (eid, sub)."""
        self.level(level + 1)
        return self._children[level].get((eid, sub), [])

    def vertex_lifts_one(self, level: int, v: int) -> List[int]:
        """Vertices of level+1 projecting onto vertex v of `level`."""
        self.level(level + 1)
        return self._vertex_fiber[level].get(("v", v), [])

    def point_fiber_vertices(self, level: int, p: GraphPoint) -> List[int]:
        """Vertices of level+1 whose image is the point p of `level`."""
        self.level(level + 1)
        key = self.level(level).canonical_key(p)
        return self._vertex_fiber[level].get(key, [])

    # -- projections and lifts ----------------------------------------------

    def project_point(self, from_level: int, to_level: int,
                      p: GraphPoint) -> GraphPoint:
        if to_level > from_level:
            raise InputError("to_level must be <= from_level")
        self.level(from_level)
        cur = p
        for lev in range(from_level, to_level, -1):
            g = self._graphs[lev]
            g._check_point(cur)
            eid, sub = self._edge_parent[lev - 1][cur.edge]
            cur = GraphPoint(eid, sub * g.scale + cur.offset)
        return cur

    def projection_table(self, from_level: int, to_level: int) -> ProjectionTable:
        return ProjectionTable(self, from_level, to_level)

    def lift_point(self, from_level: int, to_level: int,
                   p: GraphPoint) -> GraphPoint:
        """Deterministic (lexicographically least) lift of a point."""
        if to_level < from_level:
            raise InputError("to_level must be >= from_level")
        cur = p
        for lev in range(from_level, to_level):
            g = self._graphs[lev] if lev < len(self._graphs) else self.level(lev)
            key = g.canonical_key(cur)
            self.level(lev + 1)
            if key[0] == "v":
                child_v = min(self._vertex_fiber[lev][key])
                cur = self.level(lev + 1).vertex_point(child_v)
            else:
                child_scale = g.scale / self.data.m
                sub = int(cur.offset / child_scale)
                if sub == self.data.m:
                    sub -= 1
                kids = self.edge_children(lev, cur.edge, sub)
                ce = min(kids)
                cur = GraphPoint(ce, cur.offset - sub * child_scale)
        return cur

    def lift_path(self, from_level: int, to_level: int,
                  path: Sequence[int], start: GraphPoint) -> List[int]:
        """Lift an edge path one or more levels, starting at `start`.

        The path is traversed from the endpoint that `start` projects onto;
        at every junction the least-id valid continuation is chosen.  The
        start must be a vertex lying over the path's first vertex.
        """
        if to_level < from_level:
            raise InputError("to_level must be >= from_level")
        g_from = self.level(from_level)
        g_to = self.level(to_level)
        start_key = g_to.canonical_key(start)
        if start_key[0] != "v":
            raise InputError("lift start must be a vertex")
        if not path:
            return []
        order = self._traversal_vertices(g_from, path)
        proj = self.project_point(to_level, from_level, start)
        key = g_from.canonical_key(proj)
        if len(path) == 1 and key == ("v", order[1]) and order[1] != order[0]:
            order = [order[1], order[0]]  # single edge traversed high-to-low
        if key != ("v", order[0]):
            raise InputError("start does not project onto the path start")
        cur_path = list(path)
        cur_level = from_level
        cur_start_v = order[0]
        while cur_level < to_level:
            start_v_child = self._start_vertex_at(cur_level + 1, to_level, start)
            cur_path = self._lift_one(cur_level, cur_path, cur_start_v,
                                      start_v_child)
            cur_level += 1
            cur_start_v = start_v_child
        return cur_path

    def _start_vertex_at(self, level: int, start_level: int,
                         start: GraphPoint) -> int:
        proj = self.project_point(start_level, level, start)
        key = self.level(level).canonical_key(proj)
        if key[0] != "v":
            raise InputError("start does not project to a vertex")
        return key[1]

    def _traversal_vertices(self, g: MetricGraph, path: Sequence[int]) -> List[int]:
        return path_vertices(g, path)

    def _lift_one(self, level: int, path: Sequence[int], start_v: int,
                  start_v_child: int) -> List[int]:
        g = self.level(level)
        child = self.level(level + 1)
        m = self.data.m
        verts = self._traversal_vertices(g, path)
        if verts[0] != start_v and len(path) == 1 and verts[1] == start_v:
            verts = [verts[1], verts[0]]
        if verts[0] != start_v:
            raise InputError("lift start vertex is not on the path start")
        out = []
        cur = start_v_child
        for k, eid in enumerate(path):
            a, b = g.edges[eid]
            forward = (verts[k] == a)  # traversing low -> high
            subs = range(m) if forward else range(m - 1, -1, -1)
            for sub in subs:
                got = None
                for ce in sorted(self.edge_children(level, eid, sub)):
                    ca, cb = child.edges[ce]
                    if forward and ca == cur:
                        got = (ce, cb)
                        break
                    if not forward and cb == cur:
                        got = (ce, ca)
                        break
                if got is None:
                    raise InputError(
                        f"no lift continuation at level {level + 1}, "
                        f"vertex {cur}, edge {eid} sub {sub}")
                out.append(got[0])
                cur = got[1]
        return out

    # -- constants -----------------------------------------------------------

    def c_eta(self) -> Fraction:
        """Accumulated fiber-diameter cost over all deeper levels: the gap
        between the metric at one level and at any deeper level is below
        c_eta * scale."""
        return c_eta_value(self.data.eta, self.data.m)

    def default_ball_multiple(self) -> int:
        """Least integer > 100 * c_eta; radius multiplier for ball families."""
        c = 100 * self.c_eta()
        return int(c) + 1

    # -- scale skipping --------------------------------------------------------

    def skip_scales(self, K: int) -> "InverseSystem":
        if K < 1:
            raise InputError("K must be >= 1")
        if K == 1:
            return self
        if self.data.m ** K > edge_budget():
            raise ResourceError(f"m^K = {self.data.m ** K} exceeds budget")
        new_data = SystemData(self.data.m ** K, 4 * self.data.eta,
                              self.data.delta)
        rule = _SkippedRule(self, K)
        return InverseSystem(new_data, rule, name=f"{self.name}-skip{K}",
                             max_edges=self.max_edges)

    def scale_skip_report(self, K_max: int = 40) -> dict:
        """Smallest K making the contraction product small enough that one
        unit of length at a stage costs under 1/100 at the next stage."""
        rows = []
        chosen = None
        for K in range(1, K_max + 1):
            eta_k = self.data.eta if K == 1 else 4 * self.data.eta
            m_k = self.data.m ** K
            c = c_eta_value(eta_k, m_k)
            value = float(c) / m_k * math.log(20 * float(c) * m_k) / math.log(m_k)
            ok = value < 0.01
            rows.append({"K": K, "value": value, "ok": ok})
            if ok and chosen is None:
                chosen = K
                break
        return {"smallest_adequate_K": chosen, "rows": rows}


def c_eta_value(eta: Fraction, m: int) -> Fraction:
    return 2 * Fraction(eta) * m / (m - 1)


class _SkippedRule:
    """Rule for the K-step-composed tower X~_n = X_{K n}."""

    def __init__(self, base: InverseSystem, K: int):
        self.base = base
        self.K = K
        self.root_label = getattr(base.rule, "root_label", "default")
        f = getattr(base.rule, "edges_per_edge", None)
        self.edges_per_edge = (f ** K) if f else None

    def next_level(self, g: MetricGraph, labels: Sequence[str]) -> LevelStep:
        base_level = g.level * self.K  # g.level counts skipped levels
        base_child = self.base.level(base_level + self.K)
        child = MetricGraph(g.level + 1, g.m, base_child.pi0v,
                            base_child.edges)
        gi = self.base.level(base_level)
        edge_parent = []
        child_scale = child.scale
        for eid in range(child.num_edges):
            e = eid
            for lev in range(base_level + self.K, base_level, -1):
                e = self.base.edge_parent(lev, e)[0]
            lo_child = base_child.pi0v[base_child.edges[eid][0]]
            lo_parent = gi.pi0v[gi.edges[e][0]]
            sub = (lo_child - lo_parent) / child_scale
            if sub.denominator != 1:
                raise InputError("composed sub index is not integral")
            edge_parent.append((e, int(sub)))
        vertex_image = []
        for v in range(base_child.num_vertices):
            p = base_child.vertex_point(v)
            img = self.base.project_point(base_level + self.K, base_level, p)
            vertex_image.append(img)
        lab = self.base._labels[base_level + self.K]
        return LevelStep(child, edge_parent, vertex_image, lab)


# -- built-in systems ---------------------------------------------------------


def diamond_system(max_edges: Optional[int] = None) -> InverseSystem:
    data = SystemData(m=4, eta=Fraction(1, 2), delta=3)
    return InverseSystem(data, ReplacementRule({"default": diamond_template()}),
                         name="diamond", max_edges=max_edges)


def laakso_system(max_edges: Optional[int] = None) -> InverseSystem:
    data = SystemData(m=2, eta=Fraction(1), delta=4)
    return InverseSystem(data, GluedDoublingRule(), name="laakso",
                         max_edges=max_edges)


# -- deliberately broken rules for validator tests ----------------------------


def mutant_dropped_edge_system() -> InverseSystem:
    """Diamond rule with one branch edge removed: the upper branch vertex
    loses its forward continuation, so the projection is no longer open."""
    F = Fraction
    coords = [F(0), F(1, 4), F(1, 2), F(1, 2), F(3, 4), F(1)]
    tedges = [
        (0, 1, 0, "default"),
        (1, 2, 1, "default"),
        (1, 3, 1, "default"),
        (2, 4, 2, "default"),
        (4, 5, 3, "default"),
    ]
    tpl = ReplacementTemplate(4, coords, tedges, check=False)
    data = SystemData(m=4, eta=Fraction(1, 2), delta=3)
    return InverseSystem(data, ReplacementRule({"default": tpl}),
                         name="mutant-dropped-edge")


def mutant_spur_system() -> InverseSystem:
    """Diamond rule plus a dangling spur: a vertex whose image is an
    interior point but which has edges on one side only (non-open map)."""
    F = Fraction
    coords = [F(0), F(1, 4), F(1, 2), F(1, 2), F(3, 4), F(1), F(3, 4)]
    tedges = [
        (0, 1, 0, "default"),
        (1, 2, 1, "default"),
        (1, 3, 1, "default"),
        (2, 4, 2, "default"),
        (3, 4, 2, "default"),
        (4, 5, 3, "default"),
        (2, 6, 2, "default"),  # spur up from the first branch vertex
    ]
    tpl = ReplacementTemplate(4, coords, tedges, check=False)
    data = SystemData(m=4, eta=Fraction(1, 2), delta=3)
    return InverseSystem(data, ReplacementRule({"default": tpl}),
                         name="mutant-spur")


def mutant_long_edge_system() -> InverseSystem:
    """Diamond rule where the top two sub-edges are fused into one edge of
    double length: the common-edge-length axiom fails."""
    F = Fraction
    coords = [F(0), F(1, 4), F(1, 2), F(1, 2), F(3, 4), F(1)]
    tedges = [
        (0, 1, 0, "default"),
        (1, 2, 1, "default"),
        (1, 3, 1, "default"),
        (3, 4, 2, "default"),
        (2, 5, 2, "default"),  # spans [1/2, 1]: twice the edge length
        (4, 5, 3, "default"),
    ]
    tpl = ReplacementTemplate(4, coords, tedges, check=False)
    data = SystemData(m=4, eta=Fraction(1, 2), delta=3)
    return InverseSystem(data, ReplacementRule({"default": tpl}),
                         name="mutant-long-edge")


# -- axiom validation ----------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    witness: Optional[str] = None
    details: dict = field(default_factory=dict)


@dataclass
class ValidationReport:
    system: str
    max_level: int
    checks: List[CheckResult]
    measured_eta: Optional[Fraction] = None
    measured_eta_by_level: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {
            "system": self.system,
            "max_level": self.max_level,
            "passed": self.passed,
            "measured_eta": (format_fraction(self.measured_eta)
                             if self.measured_eta is not None else None),
            "measured_eta_by_level": {
                str(k): format_fraction(v)
                for k, v in self.measured_eta_by_level.items()},
            "checks": [
                {"name": c.name, "passed": c.passed, "witness": c.witness,
                 "details": {k: str(v) for k, v in c.details.items()}}
                for c in self.checks],
        }


def paired_route_sup(s: Fraction, d_ll, d_lh, d_hl, d_hh) -> Fraction:
    """Exact sup over t in [0,s] of the distance between matching-offset
    points on two parallel edges, given the four endpoint distances."""
    lines = [(2, d_ll), (0, s + d_lh), (0, s + d_hl), (-2, 2 * s + d_hh)]
    cands = {Fraction(0), s}
    for i in range(len(lines)):
        a1, b1 = lines[i]
        for j in range(i + 1, len(lines)):
            a2, b2 = lines[j]
            if a1 != a2:
                t = Fraction(b2 - b1, a1 - a2)
                if 0 < t < s:
                    cands.add(t)
    best = Fraction(0)
    for t in cands:
        val = min(a * t + b for a, b in lines)
        if val > best:
            best = val
    return best


def validate_axioms(sys: InverseSystem, max_level: int) -> ValidationReport:
    """Check every tower axiom up to `max_level`; failures carry witnesses."""
    report = ValidationReport(system=sys.name, max_level=max_level, checks=[])

    def add(name, passed, witness=None, **details):
        report.checks.append(CheckResult(name, passed, witness, details))

    # base level shape
    g0 = sys.level(0)
    base_ok = (g0.num_vertices == 2 and g0.num_edges == 1
               and sorted(g0.pi0v) == [Fraction(0), Fraction(1)])
    add("base_is_unit_interval", base_ok,
        None if base_ok else f"level 0 has {g0.num_vertices} vertices")

    connected_w = None
    valence_w = None
    coords_w = None
    lengths_w = None
    for n in range(max_level + 1):
        g = sys.level(n)
        if connected_w is None and not g.is_connected():
            connected_w = f"level {n} is disconnected"
        if valence_w is None:
            for v in range(g.num_vertices):
                if g.degree(v) > sys.data.delta:
                    valence_w = (f"level {n} vertex {v} has valence "
                                 f"{g.degree(v)} > {sys.data.delta}")
                    break
        if coords_w is None:
            for v, q in enumerate(g.pi0v):
                if (q / g.scale).denominator != 1 or not (0 <= q <= 1):
                    coords_w = f"level {n} vertex {v} at {q} off the grid"
                    break
        if lengths_w is None:
            for eid, (a, b) in enumerate(g.edges):
                if g.pi0v[b] - g.pi0v[a] != g.scale:
                    lengths_w = (f"level {n} edge {eid} spans "
                                 f"{g.pi0v[b] - g.pi0v[a]}, want {g.scale}")
                    break
    add("connected", connected_w is None, connected_w)
    add("valence_bound", valence_w is None, valence_w)
    add("vertex_coordinates_on_grid", coords_w is None, coords_w)
    add("edge_lengths", lengths_w is None, lengths_w)

    simplicial_w = None
    openness_w = None
    surjective_w = None
    for n in range(max_level):
        g = sys.level(n)
        child = sys.level(n + 1)
        m = sys.data.m
        cs = child.scale
        # every child edge sits exactly over one sub-edge, endpoints match
        for ce in range(child.num_edges):
            eid, sub = sys.edge_parent(n + 1, ce)
            if not (0 <= eid < g.num_edges and 0 <= sub < m):
                simplicial_w = f"level {n + 1} edge {ce} bad parent ({eid},{sub})"
                break
            ca, cb = child.edges[ce]
            want_lo = g.pi0v[g.edges[eid][0]] + sub * cs
            if child.pi0v[ca] != want_lo or child.pi0v[cb] != want_lo + cs:
                simplicial_w = (f"level {n + 1} edge {ce} does not cover "
                                f"sub-edge ({eid},{sub})")
                break
            img_a = sys.vertex_image(n + 1, ca)
            img_b = sys.vertex_image(n + 1, cb)
            ka = g.canonical_key(img_a)
            kb = g.canonical_key(img_b)
            want_a = g.canonical_key(GraphPoint(eid, sub * cs))
            want_b = g.canonical_key(GraphPoint(eid, sub * cs + cs))
            if ka != want_a or kb != want_b:
                simplicial_w = (f"level {n + 1} edge {ce}: endpoint images "
                                f"disagree with sub-edge ({eid},{sub})")
                break
        if simplicial_w:
            break
        # surjectivity onto sub-edges
        for eid in range(g.num_edges):
            for sub in range(m):
                if not sys.edge_children(n, eid, sub):
                    surjective_w = f"sub-edge ({eid},{sub}) of level {n} uncovered"
                    break
            if surjective_w:
                break
        # openness at every child vertex
        for v in range(child.num_vertices):
            img = sys.vertex_image(n + 1, v)
            key = g.canonical_key(img)
            required = set()
            if key[0] == "v":
                u = key[1]
                for eid in g.adj[u]:
                    a, b = g.edges[eid]
                    required.add((eid, 0 if u == a else m - 1))
            else:
                eid = img.edge
                k = img.offset / cs
                if k.denominator != 1:
                    simplicial_w = (f"vertex {v} of level {n + 1} maps to "
                                    f"non-grid point of edge {eid}")
                    break
                k = int(k)
                required.add((eid, k - 1))
                required.add((eid, k))
            available = set()
            for ce in child.adj[v]:
                available.add(sys.edge_parent(n + 1, ce))
            missing = required - available
            if missing and openness_w is None:
                openness_w = (f"level {n + 1} vertex {v} lacks a lift of "
                              f"sub-edge {sorted(missing)[0]}")
        if simplicial_w:
            break
    add("simplicial_edge_isometry", simplicial_w is None, simplicial_w)
    add("surjective_on_subedges", surjective_w is None, surjective_w)
    add("openness", openness_w is None, openness_w)

    # fiber diameters: measured eta per level
    fiber_w = None
    vertex_fibers_trivial = True
    for n in range(max_level):
        g = sys.level(n)
        child = sys.level(n + 1)
        m = sys.data.m
        cs = child.scale
        worst = Fraction(0)
        # vertex fibers
        fiber_map = sys._vertex_fiber[n]
        for key, members in fiber_map.items():
            if len(members) > 1:
                if key[0] == "v":
                    vertex_fibers_trivial = False
                for i in range(len(members)):
                    for j in range(i + 1, len(members)):
                        d = child.vertex_distance(members[i], members[j])
                        if d > worst:
                            worst = d
        # parallel-edge fibers over sub-edge interiors
        for eid in range(g.num_edges):
            for sub in range(m):
                kids = sys.edge_children(n, eid, sub)
                for i in range(len(kids)):
                    ia, ib = child.edges[kids[i]]
                    for j in range(i + 1, len(kids)):
                        ja, jb = child.edges[kids[j]]
                        sup = paired_route_sup(
                            cs,
                            child.vertex_distance(ia, ja),
                            child.vertex_distance(ia, jb),
                            child.vertex_distance(ib, ja),
                            child.vertex_distance(ib, jb))
                        if sup > worst:
                            worst = sup
        ratio = worst / g.scale
        report.measured_eta_by_level[n] = ratio
        if report.measured_eta is None or ratio > report.measured_eta:
            report.measured_eta = ratio
        if ratio > sys.data.eta and fiber_w is None:
            fiber_w = (f"fiber diameter ratio {ratio} at level {n} exceeds "
                       f"eta={sys.data.eta}")
    add("fiber_diameter_bound", fiber_w is None, fiber_w,
        measured_eta=report.measured_eta,
        vertex_fibers_trivial=vertex_fibers_trivial)
    return report


# -- system spec files ---------------------------------------------------------


def system_from_spec(obj: dict, max_edges: Optional[int] = None) -> InverseSystem:
    kind = obj.get("kind")
    if kind == "diamond":
        return diamond_system(max_edges=max_edges)
    if kind == "laakso":
        return laakso_system(max_edges=max_edges)
    if kind != "custom":
        raise ParseError(f"unknown system kind {kind!r}")
    try:
        m = int(obj["m"])
        eta = parse_fraction(obj["eta"])
        delta = int(obj["delta"])
        tpl_table = obj["templates"]
        root_label = obj.get("root_label", "default")
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad custom system spec: {exc}") from None
    templates = {}
    for label, tobj in tpl_table.items():
        coords = [parse_fraction(v["t"]) for v in tobj["vertices"]]
        tedges = [(int(e["v0"]), int(e["v1"]), int(e["sub"]),
                   str(e.get("label", label)))
                  for e in tobj["edges"]]
        templates[label] = ReplacementTemplate(m, coords, tedges)
    data = SystemData(m=m, eta=eta, delta=delta)
    return InverseSystem(data, ReplacementRule(templates, root_label),
                         name="custom", max_edges=max_edges)


def load_system(path, max_edges: Optional[int] = None) -> InverseSystem:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read system spec {path}: {exc}") from None
    return system_from_spec(obj, max_edges=max_edges)


def get_system(name_or_path: str,
               max_edges: Optional[int] = None) -> InverseSystem:
    """Accept the built-in names or a path to a spec file."""
    if name_or_path == "diamond":
        return diamond_system(max_edges=max_edges)
    if name_or_path == "laakso":
        return laakso_system(max_edges=max_edges)
    return load_system(name_or_path, max_edges=max_edges)
