"""Numerical laboratory for non-autonomous maximal regularity."""
__version__ = "0.1.0"
