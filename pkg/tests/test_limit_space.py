"""Limit points, certified distances, nets, ball and cube families.

The cube oracle below recomputes membership from scratch: a level-n point
is in the cube of edge e iff its distance to e is at most 2 m^-n, and
point-to-edge distances factor through the endpoints of e, with vertex
distances taken from the independent subdivided-Dijkstra oracle.
"""

import random
from fractions import Fraction as F

import pytest

from laakso_tst.errors import InputError
from laakso_tst.inverse_system import diamond_system, laakso_system
from laakso_tst.limit_space import (
    IN,
    OUT,
    UNCERTAIN,
    BallSpec,
    CubeSpec,
    DistanceInterval,
    LimitPoint,
    ball_family,
    cube_family,
    cube_structure,
    limit_distance,
    make_cube,
    membership,
    net,
    net_report,
    write_ball_csv,
    write_cube_csv,
)
from laakso_tst.metric_graph import GraphPoint

from oracles import subdivided_dijkstra_vertex_dists


def oracle_point_to_edge(g, oracle_rows, p, eid):
    """Distance from point p to edge eid using oracle vertex distances."""
    a, b = g.edges[eid]
    if p.edge == eid:
        return F(0)
    u, v = g.edges[p.edge]
    s = g.scale
    t = p.offset
    best = None
    for w, cost in ((u, t), (v, s - t)):
        for target in (a, b):
            d = cost + oracle_rows[w][target]
            if best is None or d < best:
                best = d
    return best


class TestLimitPoint:
    def test_thread_consistency_enforced(self):
        sys = diamond_system()
        g0, g1 = sys.level(0), sys.level(1)
        good = LimitPoint.from_point(sys, 1, g1.point(0, F(1, 8)), 3)
        assert good.depth == 3
        bad_coords = [g0.point(0, F(7, 8))] + list(good.coords[1:])
        with pytest.raises(InputError):
            LimitPoint(sys, bad_coords)

    def test_pi0_constant_along_thread(self):
        sys = laakso_system()
        x = LimitPoint.from_point(sys, 0, sys.level(0).point(0, F(1, 3)), 4)
        for i in range(5):
            assert sys.level(i).pi0(x.at(i)) == F(1, 3)

    def test_truncate_and_deepen(self):
        sys = diamond_system()
        x = LimitPoint.from_point(sys, 1, sys.level(1).point(2, F(1, 16)), 4)
        y = x.truncate(2)
        assert y.depth == 2
        assert y.coords == x.coords[:3]
        z = y.deepen(4)
        assert z.depth == 4
        # deepening after truncation retraces the least-id lift
        assert z == x


class TestLimitDistance:
    def test_identical_points(self):
        sys = diamond_system()
        x = LimitPoint.from_point(sys, 0, sys.level(0).point(0, F(1, 2)), 3)
        ival = limit_distance(x, x)
        assert ival.lo == 0
        assert ival.hi == sys.c_eta() * F(1, 64)

    @pytest.mark.parametrize("make", [diamond_system, laakso_system])
    @pytest.mark.parametrize("depth", [0, 1, 2, 3])
    def test_endpoints_at_distance_one(self, make, depth):
        sys = make()
        g0 = sys.level(0)
        x = LimitPoint.from_point(sys, 0, g0.vertex_point(0), depth)
        y = LimitPoint.from_point(sys, 0, g0.vertex_point(1), depth)
        assert limit_distance(x, y).lo == 1

    def test_laakso_twin_lifts_of_a_vertex(self):
        # the two level-2 vertices over the same level-1 vertex, checked
        # against the independent Dijkstra oracle
        sys = laakso_system()
        g2 = sys.level(2)
        target = 1  # a level-1 vertex with two lifts
        twins = sys.vertex_lifts_one(1, target)
        assert len(twins) == 2
        x = LimitPoint.from_point(sys, 2, g2.vertex_point(twins[0]), 2)
        y = LimitPoint.from_point(sys, 2, g2.vertex_point(twins[1]), 2)
        ival = limit_distance(x, y)
        oracle = subdivided_dijkstra_vertex_dists(g2, twins[0], parts=4)
        assert ival.lo == oracle[twins[1]]
        assert ival.width == sys.c_eta() * F(1, 4)

    def test_mixed_depths_truncate(self):
        sys = diamond_system()
        p = sys.level(0).point(0, F(1, 2))
        x = LimitPoint.from_point(sys, 0, p, 2)
        y = LimitPoint.from_point(sys, 0, p, 4)
        ival = limit_distance(x, y)
        assert ival.hi - ival.lo == sys.c_eta() * sys.level(2).scale

    @pytest.mark.parametrize("make", [diamond_system, laakso_system])
    def test_interval_nesting_in_depth(self, make):
        sys = make()
        g2 = sys.level(2)
        rng = random.Random(3)
        for _ in range(20):
            p = g2.point(rng.randrange(g2.num_edges), g2.scale / 2)
            q = g2.point(rng.randrange(g2.num_edges), g2.scale / 4)
            prev = None
            for depth in (2, 3, 4):
                x = LimitPoint.from_point(sys, 2, p, depth)
                y = LimitPoint.from_point(sys, 2, q, depth)
                ival = limit_distance(x, y)
                if prev is not None:
                    assert ival.lo >= prev.lo
                    assert ival.hi <= prev.hi
                prev = ival


class TestNet:
    def test_level_zero_single_point(self):
        sys = diamond_system()
        pts = net(sys, 0, 2)
        assert len(pts) == 1
        assert pts[0].pi0() == F(1, 2)

    def test_diamond_level_one_six_points(self):
        assert len(net(diamond_system(), 1, 2)) == 6

    def test_separation_exhaustive(self):
        sys = diamond_system()
        pts = net(sys, 1, 3)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                assert limit_distance(pts[i], pts[j]).lo >= F(1, 4)

    @pytest.mark.parametrize("make,n,depth", [(diamond_system, 1, 3),
                                              (laakso_system, 2, 4)])
    def test_density_report(self, make, n, depth):
        sys = make()
        rep = net_report(sys, n, depth)
        s = sys.level(n).scale
        assert rep["separation_lo"] >= s
        bound = (F(1, 2) + sys.c_eta()) * s + sys.c_eta() * sys.level(depth).scale
        assert rep["density_hi_on_vertices"] <= bound


class TestBallFamily:
    def test_counts(self):
        assert len(ball_family(diamond_system(), 0, 2)) == 1
        assert len(ball_family(diamond_system(), 1, 2)) == 7
        assert len(ball_family(diamond_system(), 2, 3)) == 43

    def test_default_radius(self):
        b = ball_family(diamond_system(), 1, 2)[1]
        assert b.level == 1
        assert b.a_mult == 134
        assert b.radius == 134 * F(1, 4)
        assert b.diam_norm == 2 * b.radius

    def test_center_over_edge_midpoint(self):
        sys = laakso_system()
        for b in ball_family(sys, 1, 3):
            g = sys.level(b.level)
            p = b.center.at(b.level)
            assert g.canonical_key(p) == g.canonical_key(
                GraphPoint(b.edge, g.scale / 2))

    def test_ball_contains_preimage_of_its_edge(self):
        # every depth-N point over e_n tests `in`
        for make in (diamond_system, laakso_system):
            sys = make()
            balls = ball_family(sys, 1, 3)
            g3 = sys.level(3)
            for b in balls:
                if b.level != 1:
                    continue
                for eid in range(g3.num_edges):
                    e1 = eid
                    for lev in (3, 2):
                        e1 = sys.edge_parent(lev, e1)[0]
                    if e1 != b.edge:
                        continue
                    x = LimitPoint.from_point(sys, 3,
                                              g3.point(eid, g3.scale / 2), 3)
                    assert membership(x, b) == IN

    def test_center_in_own_ball(self):
        b = ball_family(diamond_system(), 1, 3)[2]
        assert membership(b.center, b) == IN

    def test_uncertain_forced_at_boundary(self):
        sys = diamond_system()
        g1 = sys.level(1)
        x = LimitPoint.from_point(sys, 1, g1.vertex_point(0), 1)
        c = LimitPoint.from_point(sys, 1, g1.point(0, g1.scale / 2), 1)
        ival = limit_distance(x, c)
        # a ball whose radius splits the interval cannot be decided
        fake = BallSpec(level=1, edge=0, center=c,
                        a_mult=1)  # radius 1/4: above lo = 1/8, below hi
        assert ival.lo < fake.radius < ival.hi
        assert membership(x, fake) == UNCERTAIN


class TestCubeStructure:
    @pytest.mark.parametrize("make,n", [(diamond_system, 1),
                                        (diamond_system, 2),
                                        (laakso_system, 2),
                                        (laakso_system, 3)])
    def test_membership_matches_oracle(self, make, n):
        sys = make()
        g = sys.level(n)
        oracle_rows = {v: subdivided_dijkstra_vertex_dists(g, v, parts=2)
                       for v in range(g.num_vertices)}
        rng = random.Random(11)
        eids = rng.sample(range(g.num_edges), min(6, g.num_edges))
        for eid in eids:
            cube = make_cube(sys, n, eid, 2)
            for f in range(g.num_edges):
                for t in (F(0), g.scale / 4, g.scale / 2, g.scale):
                    p = g.point(f, t)
                    want = oracle_point_to_edge(g, oracle_rows, p, eid) \
                        <= 2 * g.scale
                    assert cube.contains_level_point(p) == want, (eid, f, t)

    def test_contains_own_edge_and_min_diameter(self):
        sys = laakso_system()
        for n in (1, 2):
            g = sys.level(n)
            for eid in range(0, g.num_edges, 3):
                cube = make_cube(sys, n, eid, 2)
                assert eid in cube.full_edges
                assert cube.exact_diameter() >= g.scale

    def test_laakso_parallel_half_edges_merge(self):
        sys = laakso_system()
        cubes = [q for q in cube_family(sys, 1) if q.level == 1]
        # at level 1 every edge is within two edges of every other
        assert len(cubes) == 1
        assert set(cubes[0].merged_edges) == {0, 1, 2, 3}

    def test_diamond_level_one_distinct_cubes(self):
        cubes = [q for q in cube_family(diamond_system(), 1) if q.level == 1]
        # hand count: the outer edges see five edges, the middle four see six
        assert len(cubes) == 3
        sizes = sorted(len(q.full_edges) for q in cubes)
        assert sizes == [5, 5, 6]

    def test_deeper_duplicates_only_from_equal_sets(self):
        sys = laakso_system()
        for q in cube_family(sys, 3):
            if len(q.merged_edges) > 1:
                base = make_cube(sys, q.level, q.merged_edges[0], q.a_mult)
                for other in q.merged_edges[1:]:
                    assert make_cube(sys, q.level, other,
                                     q.a_mult).key() == base.key()

    def test_cube_inside_ball(self):
        # sampled points of Q(e) are `in` B(e) at the default radius
        sys = diamond_system()
        depth = 3
        balls = {(b.level, b.edge): b for b in ball_family(sys, 2, depth)}
        for q in cube_family(sys, 2):
            b = balls[(q.level, q.edge)]
            for eid, lo, hi in list(q.members.iter_segments())[:4]:
                p = GraphPoint(eid, (lo + hi) / 2)
                x = LimitPoint.from_point(sys, q.level, p, depth)
                assert membership(x, q) == IN
                assert membership(x, b) == IN

    def test_point_three_edges_away_is_out(self):
        sys = diamond_system()
        g2 = sys.level(2)
        cube = make_cube(sys, 2, 0, 134)
        # walk to an edge at hop distance > 2 from edge 0's endpoints
        far = None
        a, b = g2.edges[0]
        for f, (u, v) in enumerate(g2.edges):
            du = min(g2.vertex_distance(u, a), g2.vertex_distance(u, b))
            dv = min(g2.vertex_distance(v, a), g2.vertex_distance(v, b))
            if min(du, dv) > 2 * g2.scale:
                far = f
                break
        assert far is not None
        x = LimitPoint.from_point(sys, 2, g2.point(far, g2.scale / 2), 2)
        assert membership(x, cube) == OUT


class TestFamilyCsv:
    def test_ball_csv_golden(self, tmp_path):
        path = tmp_path / "balls.csv"
        write_ball_csv(ball_family(diamond_system(), 1, 2), path)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "level,edge_id,diam,A"
        assert rows[1] == "0,0,268,134"
        assert rows[2] == "1,0,67,134"
        assert len(rows) == 8

    def test_cube_csv_shape(self, tmp_path):
        path = tmp_path / "cubes.csv"
        cubes = cube_family(laakso_system(), 1)
        write_cube_csv(cubes, path)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "level,edge_id,diam,A"
        assert len(rows) == 1 + len(cubes)
        # level-0 cube is the whole interval system: diameter 1
        assert rows[1].startswith("0,0,1,")
