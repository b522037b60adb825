"""Exception types raised across the package."""


class BemTopoError(Exception):
    """Base class for all package errors."""


class EmptyGrid(BemTopoError):
    pass


class DisconnectedMaterial(BemTopoError):
    def __init__(self, n_components):
        super().__init__(f"material has {n_components} face-connected components")
        self.n_components = n_components


class IoError(BemTopoError):
    pass


class CoincidentPoints(BemTopoError):
    pass


class DegenerateTriangle(BemTopoError):
    pass


class OpenSurface(BemTopoError):
    pass


class NoSupportingTriangles(BemTopoError):
    pass


class BackendError(BemTopoError):
    pass


class AccuracyUnachievable(BackendError):
    pass


class NonEquilibratedSources(BackendError):
    pass


class MaxIterationsExceeded(BemTopoError):
    """GMRES did not reach the tolerance; carries the best iterate."""

    def __init__(self, x, history):
        super().__init__(
            f"GMRES stopped after {len(history) - 1} iterations, "
            f"relative residual {history[-1]:.3e}"
        )
        self.x = x
        self.history = history


class NumericalBreakdown(BemTopoError):
    def __init__(self, x, history):
        super().__init__("Arnoldi breakdown before convergence")
        self.x = x
        self.history = history


class AllRemoved(BemTopoError):
    pass


class ConfigError(BemTopoError):
    pass
