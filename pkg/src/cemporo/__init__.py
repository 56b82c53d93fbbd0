"""Constraint energy minimizing multiscale solver for 2D linear poroelasticity."""

__version__ = "0.1.0"
