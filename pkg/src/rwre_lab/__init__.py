"""Simulation and exact-verification laboratory for balanced random walks
in i.i.d. random environments on the integer lattice."""

__version__ = "0.1.0"
