"""Curves, Jones sums, and the p = 1 counterexample family.

The oracle here recomputes ball records by brute force: enumerate every
monotone geodesic at the work level and take the min-max of vertical
distances over the curve's sampled endpoints, with membership decided by
full point-to-point distances.  The engine must reproduce those values
exactly (it solves the same minimax by column DP over capped-BFS
distances, and every geodesic restricts to a window path while the DP
witness extends to a full geodesic).
"""

import json
import random
from fractions import Fraction as F

import pytest

from laakso_tst.errors import InputError, ParseError
from laakso_tst.inverse_system import diamond_system, laakso_system
from laakso_tst.metric_graph import GraphPoint
from laakso_tst.monotone_beta import enumerate_monotone, least_geodesic
from laakso_tst.tst_verify import (
    BallRecord,
    Curve,
    counterexample_curve,
    curve_emit,
    curve_ingest,
    doubled_curve,
    gamma_curve,
    jones_records,
    jones_sum,
    random_connected_curve,
    write_jones_csv,
)


class TestCurve:
    def test_length_full_and_partial(self):
        sys = diamond_system()
        g = sys.level(1)
        c = Curve(sys, 1, [0, 1], [(3, F(0), F(1, 8))])
        assert c.length == 2 * g.scale + F(1, 8)

    def test_partial_covering_edge_promoted(self):
        sys = diamond_system()
        s = sys.level(1).scale
        c = Curve(sys, 1, [0], [(1, F(0), s)])
        assert c.edges == (0, 1)
        assert c.partials == ()

    def test_overlapping_partials_merge(self):
        sys = diamond_system()
        c = Curve(sys, 1, [], [(0, F(0), F(1, 8)), (0, F(1, 16), F(3, 16))])
        assert c.partials == ((0, F(0), F(3, 16)),)
        assert c.length == F(3, 16)

    def test_partial_inside_full_edge_absorbed(self):
        sys = diamond_system()
        c = Curve(sys, 1, [2], [(2, F(1, 16), F(1, 8))])
        assert c.edges == (2,)
        assert c.partials == ()
        assert c.length == sys.level(1).scale

    def test_connectivity(self):
        sys = diamond_system()
        assert Curve(sys, 1, [0, 1, 3]).connected
        assert not Curve(sys, 1, [0, 5]).connected
        # partial touching the shared vertex keeps the curve connected
        assert Curve(sys, 1, [0], [(1, F(0), F(1, 8))]).connected
        # partial floating mid-edge does not reach edge 0's endpoint
        assert not Curve(sys, 1, [0], [(1, F(1, 16), F(1, 8))]).connected

    def test_bad_inputs(self):
        sys = diamond_system()
        s = sys.level(1).scale
        with pytest.raises(InputError):
            Curve(sys, 1, [99])
        with pytest.raises(InputError):
            Curve(sys, 1, [], [(0, F(1, 8), F(1, 16))])  # from >= to
        with pytest.raises(InputError):
            Curve(sys, 1, [], [(0, F(0), 2 * s)])  # past the edge end

    def test_ingest_emit_roundtrip(self, tmp_path):
        sys = diamond_system()
        c = counterexample_curve(sys, 4)
        path = tmp_path / "curve.json"
        curve_emit(c, path)
        c2 = curve_ingest(sys, path)
        assert c2.level == c.level
        assert c2.edges == c.edges
        assert c2.partials == c.partials
        curve_emit(c2, tmp_path / "curve2.json")
        assert (tmp_path / "curve2.json").read_bytes() == path.read_bytes()

    def test_ingest_disconnected_flagged_not_error(self, tmp_path):
        sys = diamond_system()
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"level": 1, "edges": [0, 5],
                                    "partials": []}))
        c = curve_ingest(sys, path)
        assert not c.connected

    def test_ingest_errors(self, tmp_path):
        sys = diamond_system()
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ParseError):
            curve_ingest(sys, bad)
        dangling = tmp_path / "dangling.json"
        dangling.write_text(json.dumps({"level": 1, "edges": [77],
                                        "partials": []}))
        with pytest.raises(ParseError):
            curve_ingest(sys, dangling)
        missing = tmp_path / "missing.json"
        missing.write_text(json.dumps({"edges": [0]}))
        with pytest.raises(ParseError):
            curve_ingest(sys, missing)


class TestGammaCurve:
    def test_no_spikes_at_n_zero(self):
        sys = diamond_system()
        c = gamma_curve(sys, 0, F(1, 8))
        assert c.length == 1
        assert c.level == 0

    def test_lengths_exact(self):
        sys = diamond_system()
        for n, eps in [(1, F(1, 8)), (2, F(1, 10)), (3, F(1, 7))]:
            c = gamma_curve(sys, n, eps)
            assert c.length == 1 + n * eps
            assert c.connected

    def test_structure_n2(self):
        # spike lengths 4*eps/4^k: with eps = 1/8 the batch-1 spike is two
        # full edges of X_2 and each batch-2 spike is a lone partial
        sys = diamond_system()
        c = gamma_curve(sys, 2, F(1, 8))
        assert len(c.edges) == 16 + 2
        assert len(c.partials) == 4
        assert c.length == F(5, 4)

    def test_counterexample_lengths(self):
        sys = diamond_system()
        for N in (2, 3, 4, 5):
            c = counterexample_curve(sys, N)
            assert c.length == 2
            assert c.level == N
            assert c.connected

    def test_non_diamond_rejected(self):
        with pytest.raises(InputError):
            counterexample_curve(laakso_system(), 4)

    def test_small_n_rejected(self):
        sys = diamond_system()
        with pytest.raises(InputError):
            counterexample_curve(sys, 1)

    def test_spike_tips_stick_out(self):
        # farthest endpoint from the base geodesic is the batch-1 spike
        # tip, at vertical distance twice the spike length
        sys = diamond_system()
        eps = F(1, 8)
        c = gamma_curve(sys, 2, eps)
        g = sys.level(2)
        L = least_geodesic(g)
        worst = F(0)
        for edge, lo, hi in c.pieces:
            for off in (lo, hi):
                p = GraphPoint(edge, off)
                worst = max(worst, g.distance(p, L.point_at(g.pi0(p))))
        assert worst == 2 * eps


class TestRandomCurves:
    def test_generator(self):
        sys = laakso_system()
        c = random_connected_curve(sys, 2, 7, random.Random(11))
        assert c.connected
        assert len(c.edges) == 7
        assert c.length == 7 * sys.level(2).scale
        again = random_connected_curve(sys, 2, 7, random.Random(11))
        assert again.edges == c.edges

    def test_doubled(self):
        sys = diamond_system()
        c = random_connected_curve(sys, 2, 8, random.Random(3))
        d = doubled_curve(sys, c, random.Random(4))
        assert d.connected
        assert set(c.edges) <= set(d.edges)
        assert c.length < d.length <= 2 * c.length


# -- brute-force oracle for ball records -------------------------------------------


def vertex_level(q, m):
    j = 0
    while (q * m ** j).denominator != 1:
        j += 1
    return j


def oracle_record(sys, curve, w, center_w, r, diam):
    """Min-max vertical distance over enumerated geodesics at level w."""
    g = sys.level(w)
    s_n = sys.level(curve.level).scale
    margin_w = sys.c_eta() * g.scale
    samples_cert = []
    pieces_poss = []
    for edge, lo, hi in curve.pieces:
        ends = [sys.project_point(curve.level, w, GraphPoint(edge, off))
                for off in (lo, hi)]
        dists = [g.distance(e, center_w) for e in ends]
        if min(dists) <= r + s_n:
            pieces_poss.append(ends)
        for e, d in zip(ends, dists):
            if d <= r - margin_w:
                samples_cert.append(e)
    samples_poss = [e for ends in pieces_poss for e in ends]
    if not samples_poss:
        return F(0), F(0)
    geos = enumerate_monotone(g, 5000)

    def minimax(samples):
        if not samples:
            return F(0)
        return min(max(g.distance(x, L.point_at(g.pi0(x))) for x in samples)
                   for L in geos)

    v_poss = minimax(samples_poss)
    v_cert = minimax(samples_cert)
    return v_cert / 2 / diam, min(F(1), v_poss / diam)


def oracle_records(sys, curve, max_level, a_mult):
    """(midpoint per-edge dict, vertex per-level sums) from brute force."""
    N = curve.level
    m = sys.data.m
    mid = {}
    for n in range(max_level + 1):
        gn = sys.level(n)
        w = min(n + 2, N)
        r = F(a_mult, m ** n)
        for eid in range(gn.num_edges):
            c_w = sys.lift_point(n, w, GraphPoint(eid, gn.scale / 2))
            mid[(n, eid)] = oracle_record(sys, curve, w, c_w, r, 2 * r)
    vert = {}
    gN = sys.level(N)
    for v in range(gN.num_vertices):
        q = gN.pi0v[v]
        j = vertex_level(q, m)
        if j == 0:
            continue
        for i in range(j, max_level + 1):
            w = min(i + 2, N)
            c_w = sys.project_point(N, w, gN.vertex_point(v))
            r = F(a_mult, m ** i)
            lo, hi = oracle_record(sys, curve, w, c_w, r, 2 * r)
            acc = vert.setdefault(i, [0, F(0), F(0)])
            acc[0] += 1
            acc[1] += lo
            acc[2] += hi
    return mid, vert


def engine_vertex_sums(records):
    out = {}
    for r in records:
        if r.family != "vertex":
            continue
        acc = out.setdefault(r.level, [0, F(0), F(0)])
        acc[0] += r.multiplicity
        acc[1] += r.multiplicity * r.beta_lo
        acc[2] += r.multiplicity * r.beta_hi
    return out


class TestEngineOracle:
    def check_curve(self, sys, curve, max_level):
        recs = jones_records(sys, curve, max_level, a_mult=2)
        mid_oracle, vert_oracle = oracle_records(sys, curve, max_level, 2)
        mid_engine = {(r.level, r.ref): (r.beta_lo, r.beta_hi)
                      for r in recs if r.family == "midpoint"}
        assert set(mid_engine) == set(mid_oracle)
        for key in sorted(mid_oracle):
            assert mid_engine[key] == mid_oracle[key], key
        vert_engine = engine_vertex_sums(recs)
        assert set(vert_engine) == set(vert_oracle)
        for i in sorted(vert_oracle):
            assert vert_engine[i] == vert_oracle[i], i

    def test_diamond_counterexample_n2(self):
        sys = diamond_system()
        self.check_curve(sys, counterexample_curve(sys, 2), 2)

    def test_diamond_random_with_partial(self):
        sys = diamond_system()
        base = random_connected_curve(sys, 2, 9, random.Random(21))
        s = sys.level(2).scale
        spare = min(set(range(sys.level(2).num_edges)) - set(base.edges))
        curve = Curve(sys, 2, base.edges, [(spare, F(0), s / 3)])
        self.check_curve(sys, curve, 2)

    def test_laakso_random(self):
        sys = laakso_system()
        for seed in (5, 6):
            curve = random_connected_curve(sys, 2, 8, random.Random(seed))
            self.check_curve(sys, curve, 2)

    def test_work_level_below_curve_level_diamond(self):
        # N = 4 with max_level 0 exercises the projection path (w = 2 < N)
        sys = diamond_system()
        self.check_curve(sys, counterexample_curve(sys, 4), 0)

    def test_work_level_below_curve_level_laakso(self):
        sys = laakso_system()
        curve = random_connected_curve(sys, 3, 20, random.Random(9))
        self.check_curve(sys, curve, 0)


class TestJonesSum:
    def test_flat_curve_zero(self):
        sys = diamond_system()
        L = least_geodesic(sys.level(2))
        curve = Curve(sys, 2, list(L.columns))
        rep = jones_sum(sys, curve, 1, 2)
        assert rep.total_lo == rep.total_hi == 0
        assert rep.vertex_total_hi == 0
        sub = Curve(sys, 2, list(L.columns[3:9]))
        rep2 = jones_sum(sys, sub, 1, 2)
        assert rep2.total_hi == 0

    def test_spiked_curve_positive(self):
        sys = diamond_system()
        L = least_geodesic(sys.level(2))
        off = next(e for e in range(sys.level(2).num_edges)
                   if e not in L.columns
                   and sys.level(2).edges[e][0] == sys.level(2).edges[L.columns[4]][0])
        curve = Curve(sys, 2, list(L.columns) + [off])
        rep = jones_sum(sys, curve, 1, 2)
        assert rep.total_lo > 0

    def test_report_consistency(self):
        sys = diamond_system()
        curve = counterexample_curve(sys, 3)
        recs = jones_records(sys, curve, 3, a_mult=2)
        rep = jones_sum(sys, curve, 2, 3, records=recs)
        assert rep.total_lo <= rep.total_hi <= rep.total_hi_margin
        total = sum(row.sum_hi for row in rep.rows
                    if row.family == "midpoint")
        assert total == rep.total_hi
        check = sum(r.beta_hi ** 2 * r.diam for r in recs
                    if r.family == "midpoint")
        assert check == rep.total_hi
        assert rep.ratio_hi == rep.total_hi / curve.length
        mg = sum(min(F(1), r.beta_hi + r.margin) ** 2 * r.diam for r in recs
                 if r.family == "midpoint")
        assert mg == rep.total_hi_margin

    def test_p_monotonicity(self):
        sys = laakso_system()
        curve = random_connected_curve(sys, 2, 10, random.Random(17))
        recs = jones_records(sys, curve, 2, a_mult=2)
        totals = [jones_sum(sys, curve, p, 2, records=recs).total_hi
                  for p in (1, 2, 3)]
        assert totals[0] >= totals[1] >= totals[2]

    def test_counterexample_growth_smoke(self):
        sys = diamond_system()
        lows = []
        for N in (2, 3):
            curve = counterexample_curve(sys, N)
            rep = jones_sum(sys, curve, 1, N)
            lows.append(rep.total_lo)
        assert 0 < lows[0] < lows[1]

    def test_input_validation(self):
        sys = diamond_system()
        curve = counterexample_curve(sys, 2)
        with pytest.raises(InputError):
            jones_sum(sys, curve, 0, 2)
        with pytest.raises(InputError):
            jones_sum(sys, curve, 1, 3)  # max_level above curve level
        with pytest.raises(InputError):
            jones_sum(sys, curve, 1, 2, a_mult=1)

    def test_csv(self, tmp_path):
        sys = diamond_system()
        curve = counterexample_curve(sys, 2)
        rep = jones_sum(sys, curve, 1, 2)
        path = tmp_path / "jones.csv"
        write_jones_csv(rep, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0].startswith("family,level,count,sum_lo,sum_hi")
        assert any(line.startswith("midpoint,all,") for line in lines)
        assert any(line.startswith("vertex,") for line in lines)
