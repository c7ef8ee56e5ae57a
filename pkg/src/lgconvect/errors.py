"""Exception taxonomy shared across the package."""


class LgConvectError(Exception):
    """Base class for all package errors."""


class ConfigError(LgConvectError):
    """Invalid configuration file, key, or study setup."""


class MeshFormatError(LgConvectError):
    """Malformed or inconsistent mesh file."""


class SolverFailure(LgConvectError):
    """Iterative solver failed to reach the requested tolerance.

    Carries the last SolveReport in ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CflViolation(LgConvectError):
    """Time-step certificate dt*|w|_{1,inf} <= 1/4 failed."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class FootOutsideDomain(LgConvectError):
    """An upwind point left the domain by more than the clamp tolerance."""
