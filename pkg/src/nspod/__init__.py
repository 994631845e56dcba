"""Neural shifted proper orthogonal decomposition.

A snapshot matrix Q is split into K co-moving fields, each transported by
its own time-dependent shift and each kept low-rank by a nuclear-norm
penalty. Shapes and shifts are coordinate networks trained jointly.
"""
__version__ = "0.1.0"
