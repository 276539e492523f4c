"""Numerical laboratory for L²-constrained Kirchhoff energy minimizers in 2D domains."""
__version__ = "0.1.0"
