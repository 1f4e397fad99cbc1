"""Numerical laboratory for inverse mean curvature flow."""

__version__ = "0.1.0"
