"""Exception hierarchy shared by all modules."""


class GeometryError(Exception):
    """Base class for numerical geometry failures."""


class ChartEscapeError(GeometryError):
    """A point or finite-difference stencil left the domain of its chart."""


class NoOverlapError(GeometryError):
    """A point is not in the overlap of two charts."""


class DegenerateMetricError(GeometryError):
    """Metric matrix is singular or not positive definite."""


class NonConvergenceError(GeometryError):
    """An iterative solver failed; ``best`` holds the best bound found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FiberMismatchError(GeometryError):
    """A bundle point does not lie over the expected base point."""


class HorizontalityError(GeometryError):
    """A path in the principal bundle is not horizontal within tolerance."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
