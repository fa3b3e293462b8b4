"""Kinetic Ising simulation and inverse inference."""
__version__ = "0.1.0"
