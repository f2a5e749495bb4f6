"""Budgeted scheduling of manual transcript corrections."""

__version__ = "0.1.0"
