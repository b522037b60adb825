"""Exact O(N M) summation."""
import numpy as np

from .. import _core
from .base import SourceSet, kid, kind_ids, out_dim, point_strengths


class DirectPlan:
    def __init__(self, targets, sources, output, material, eps):
        self.targets = np.ascontiguousarray(targets, float).reshape(-1, 3)
        self.sources = sources
        self.output = output
        self.material = material
        self.eps = eps
        self.kinds = kind_ids(output)

    def apply(self, strengths):
        """strengths: dict kind -> per-group values (n_groups, 3); missing kinds are zero."""
        out = np.zeros((len(self.targets), out_dim(self.output)))
        m = self.material
        for kind, val in strengths.items():
            if val is None:
                continue
            if kind not in self.kinds:
                raise ValueError(f"kind {kind} not valid for {self.output} output")
            s = point_strengths(self.sources, val)
            _core.apply_kernel(kid(kind), self.sources.points, self.sources.normals, s,
                               self.targets, m.nu, m.G, self.eps, out)
        return out


class DirectBackend:
    """Exact pairwise summation; coincident pairs (r < eps) are skipped."""

    periodic = False
    name = "direct"

    def __init__(self, material, eps=1e-14):
        self.material = material
        self.eps = eps

    def plan(self, targets, sources, output="disp"):
        return DirectPlan(targets, sources, output, self.material, self.eps)


def direct_sum(kind, sources, targets, strengths, material, normals=None, eps=1e-14):
    """Plain point sum t_i = sum_j K(x_i - y_j, n_j) s_j."""
    src = SourceSet(sources, normals)
    output = "disp" if kind in ("U", "P") else "stress"
    return DirectBackend(material, eps).plan(targets, src, output).apply({kind: strengths})
