"""Stochastic machinery for space-time harmonic maps under evolving metrics."""

__version__ = "0.1.0"
