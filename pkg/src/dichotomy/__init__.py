"""Dichotomy certificates, two-point solvers and invariant graphs."""

__version__ = "0.1.0"
