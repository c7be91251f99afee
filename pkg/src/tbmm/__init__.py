"""Tangential block majorization-minimization on embedded manifolds."""

__version__ = "0.1.0"
