"""Exception hierarchy.

Errors split into two families so the CLI can tell a mathematical verdict
about the input domain (exit code 2) from a broken internal invariant
(exit code 3).
"""


class SobexError(Exception):
    """Base class for all package errors."""


class DomainFlag(SobexError):
    """The domain itself fails a geometric or analytic property."""

    exit_code = 2


class InvariantViolation(SobexError):
    """A construction failed its own certification."""

    exit_code = 3

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class EmptyDomainError(DomainFlag):
    pass


class DegenerateCubeError(DomainFlag):
    pass


class DegenerateDomainError(DomainFlag):
    pass


class ConnectivityError(DomainFlag):
    pass


class RegularityViolationError(DomainFlag):
    """Some quasi-cube is empty at a scale where the mask should be regular."""

    def __init__(self, message, cubes=()):
        super().__init__(message)
        self.cubes = list(cubes)


class ResolutionExhaustedError(SobexError):
    """The dyadic levels cannot separate the complement from the set."""

    exit_code = 3

    def __init__(self, message, uncovered=()):
        super().__init__(message)
        self.uncovered = list(uncovered)


class InSetError(SobexError, ValueError):
    """A point lies in the closed set where a Whitney quantity is undefined."""


class EmptyRegionError(SobexError, ValueError):
    pass


class CoverageError(InvariantViolation):
    pass


class CertificationError(InvariantViolation):
    pass


class ShapeMismatchError(SobexError, ValueError):
    pass
