"""Boundary-element topology optimization for 3D linear elasticity."""
__version__ = "0.1.0"
