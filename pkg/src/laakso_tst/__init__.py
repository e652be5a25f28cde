"""Exact-arithmetic computational geometry on inverse limits of metric
graphs: multiresolution flatness measurements over curves, a divergence
demonstration for the linear-exponent sum, and a constructive algorithm
producing short connected sets through finite point clouds."""

__version__ = "0.1.0"
