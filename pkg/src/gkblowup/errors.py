"""Exception hierarchy.

Every error raised deliberately by the package derives from :class:`GKError`,
so callers can catch the whole family in one place.
"""


class GKError(Exception):
    """Base class for all package errors."""


class NotAntisymmetric(GKError, ValueError):
    pass


class NotComplexStructure(GKError, ValueError):
    pass


class SingularForm(GKError, ValueError):
    pass


class BraneViolated(GKError, ValueError):
    pass


class MorphismViolated(GKError, ValueError):
    pass


class OutOfDomain(GKError, ValueError):
    pass


class SingularLocus(GKError, ValueError):
    pass


class SingularPotential(SingularLocus):
    pass


class OnExcludedLocus(SingularLocus):
    pass


class DomainMismatch(GKError, ValueError):
    pass


class LeftDomain(GKError, RuntimeError):
    """A flow trajectory left its guard region."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"trajectory left the guard domain at step {self.step}")


class MaxSteps(GKError, RuntimeError):
    pass


class NotPositive(GKError, RuntimeError):
    pass


class ConfigInvalid(GKError, ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class UnknownStage(GKError, ValueError):
    pass
