"""Numerical laboratory for the mixed local-nonlocal operator Delta + cL."""

__version__ = "0.1.0"
