"""Numerical laboratory for the ideal Bose gas point processes in the condensed phase."""

__version__ = "0.1.0"
