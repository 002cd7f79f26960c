"""Numerical laboratory for degenerate parabolic pricing PDEs and passport options."""

__version__ = "0.1.0"
