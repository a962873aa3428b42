"""Depth-dataset quality auditing, affine-invariant evaluation, and a numpy
reference of a lightweight single-path depth decoder."""

__version__ = "0.1.0"
