"""Source sets shared by all backends."""
from dataclasses import dataclass

import numpy as np

from ..kernels import KINDS

DISP_KINDS = ("U", "P")
STRESS_KINDS = ("D", "S")


@dataclass
class SourceSet:
    """Points with normals; strength of point q is weights[q] * value[group[q]].

    Grouping lets callers pass one strength per boundary element while the
    backend sums over that element's quadrature points.
    """

    points: np.ndarray
    normals: np.ndarray = None
    weights: np.ndarray = None
    group: np.ndarray = None
    n_groups: int = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, float).reshape(-1, 3)
        n = len(self.points)
        if self.normals is None:
            self.normals = np.zeros((n, 3))
        self.normals = np.ascontiguousarray(self.normals, float).reshape(-1, 3)
        self.weights = np.ones(n) if self.weights is None else np.ascontiguousarray(self.weights, float)
        self.group = np.arange(n) if self.group is None else np.ascontiguousarray(self.group, np.int64)
        if self.n_groups is None:
            self.n_groups = int(self.group.max()) + 1 if n else 0
        if len(self.normals) != n or len(self.weights) != n or len(self.group) != n:
            raise ValueError("source arrays must have matching lengths")

    def __len__(self):
        return len(self.points)


def point_strengths(sources, values):
    values = np.asarray(values, float).reshape(sources.n_groups, 3)
    return np.ascontiguousarray(sources.weights[:, None] * values[sources.group])


def kind_ids(output):
    if output == "disp":
        return DISP_KINDS
    if output == "stress":
        return STRESS_KINDS
    raise ValueError(f"unknown output {output!r}")


def out_dim(output):
    return 3 if output == "disp" else 6


def kid(kind):
    return KINDS[kind]
