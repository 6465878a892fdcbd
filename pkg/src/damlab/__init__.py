"""Numerical laboratory for dissipative adiabatic measurements."""

__version__ = "0.1.0"
