"""Exception and warning types raised across the package."""


class RegistrationError(Exception):
    """Base class for all errors raised by regalign."""


class DimensionMismatchError(RegistrationError, ValueError):
    pass


class InvalidRotationError(RegistrationError, ValueError):
    """A matrix that should be in SO(d) is not (orthogonality or det off)."""


class NonOverlapError(RegistrationError):
    """Too few correspondences survive between two point sets."""


class AllTrimmedError(NonOverlapError):
    """Outlier trimming discarded every match."""


class DisconnectedGraphError(RegistrationError):
    """The view graph does not connect all point sets."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        desc = "; ".join("{" + ", ".join(map(str, c)) + "}" for c in self.components)
        super().__init__(f"view graph is disconnected, components: {desc}")


class DegenerateRoundingError(RegistrationError):
    """The Gram matrix has fewer than d positive eigenvalues."""


class DegenerateProjectionWarning(RuntimeWarning):
    """Projection onto SO(d) is not unique for the given input."""
