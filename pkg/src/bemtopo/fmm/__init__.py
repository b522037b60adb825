"""Summation backends for sums t_i = sum_j K(x_i, y_j, n_j) s_j."""
from .base import SourceSet, point_strengths
from .direct import DirectBackend, direct_sum
from .kifmm import FmmBackend, fmm_sum
from .periodic import PeriodicFmmBackend, fmm_sum_periodic, lattice_direct_sum

__all__ = [
    "SourceSet", "point_strengths", "DirectBackend", "direct_sum", "FmmBackend", "fmm_sum",
    "PeriodicFmmBackend", "fmm_sum_periodic", "lattice_direct_sum",
]
