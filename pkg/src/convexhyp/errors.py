"""Exception types shared across the package."""


class ConvexHypError(Exception):
    """Base class for all package errors."""


class ValidationError(ConvexHypError, ValueError):
    """Malformed input: bad shapes, out-of-domain parameters, bad schema."""


class InfeasibleError(ConvexHypError):
    """A constraint system has no feasible point."""


class MarginViolation(ConvexHypError):
    """A set touches the boundary of the admissible parameter domain."""

    def __init__(self, msg, coord=None):
        super().__init__(msg)
        self.coord = coord


class NonFiniteObjective(ConvexHypError, FloatingPointError):
    """Objective or gradient evaluated to NaN or infinity."""


class NonConvergence(ConvexHypError):
    """Iterative method stopped before reaching its tolerance."""
