"""Numerical laboratory for correlation-dressed BBGKY hierarchies and the cubic NLS limit."""

__version__ = "0.1.0"
