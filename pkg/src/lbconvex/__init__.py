"""Stationary linearized Boltzmann equation with diffuse reflection on strictly convex domains."""

__version__ = "0.1.0"
