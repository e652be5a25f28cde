"""Hand-built graph fixtures, written down independently of the generator
rules so generator bugs cannot leak into the oracle values."""

from fractions import Fraction

from laakso_tst.metric_graph import MetricGraph

F = Fraction


def diamond_level1() -> MetricGraph:
    """Six vertices, six edges, scale 1/4; two parallel middle vertices."""
    pi0 = [F(0), F(1, 4), F(1, 2), F(1, 2), F(3, 4), F(1)]
    edges = [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4), (4, 5)]
    return MetricGraph(level=1, m=4, pi0v=pi0, edges=edges)


# vertex roles in diamond_level1
D_V0, D_V1, D_MID_A, D_MID_B, D_V2, D_V3 = range(6)


def laakso_level1() -> MetricGraph:
    """Two copies of a bisected interval glued at the middle: 5 vertices,
    4 edges of length 1/2, duplicated endpoints."""
    pi0 = [F(0), F(0), F(1, 2), F(1), F(1)]
    edges = [(0, 2), (1, 2), (2, 3), (2, 4)]
    return MetricGraph(level=1, m=2, pi0v=pi0, edges=edges)


L_END0_A, L_END0_B, L_MID, L_END1_A, L_END1_B = range(5)


def two_parallel_paths() -> MetricGraph:
    """v - a - w and v - b - w, m=2 at level 1 it is not, but serves as a
    generic parallel-branch metric fixture (m=2, level 1 shape check off)."""
    pi0 = [F(0), F(1, 2), F(1, 2), F(1)]
    edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
    return MetricGraph(level=1, m=2, pi0v=pi0, edges=edges)
