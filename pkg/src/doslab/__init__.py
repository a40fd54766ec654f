"""Density-of-states laboratory for lattice Schroedinger operators."""

__version__ = "0.1.0"
