"""
Exception hierarchy shared by the domain modules and the orchestrators.
"""


class KacError(Exception):
    """Base class for every error raised by the engine."""


class KernelDomainError(KacError, ValueError):
    """An argument lies outside the domain of a kernel function."""


class ZeroVectorError(KacError, ValueError):
    """A frame or rotation was requested for the zero vector."""


class DegenerateInputError(KacError, ValueError):
    """Input velocities cannot be normalised (zero centred variance)."""


class SizeMismatchError(KacError, ValueError):
    """Two atom clouds or states do not have the same number of particles."""


class MissingMomentError(KacError, KeyError):
    """A moment order was requested that the trace does not carry."""


class InvariantViolation(KacError):
    """A conservation law or proven bound failed beyond its drift budget."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class PopulationExplosion(KacError):
    """The branching population exceeded its configured cap."""


class ConfigError(KacError):
    """The experiment configuration is unreadable or invalid."""


class CacheFormatError(KacError):
    """A RateTable cache file has the wrong magic bytes or version."""


class ParameterError(KacError, ValueError):
    """A numeric parameter is outside its documented range."""


class AssignmentTooLarge(KacError, ValueError):
    """An exact assignment was requested above the exact-size limit."""
