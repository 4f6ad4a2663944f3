"""Exception types raised by the localization engine."""


class HybridLocError(Exception):
    """Base class for all errors raised by this package."""


class HalfSpaceViolation(HybridLocError):
    """A point lies behind (or on) the reflecting plane of a surface."""


class DomainError(HybridLocError, ValueError):
    """An argument lies outside the domain of a formula."""


class SeparationInfeasible(HybridLocError):
    """BS-side signatures are too close to collinear for zero-forcing."""


class EmptyDictionary(HybridLocError):
    """The sampling grid produced no atoms."""


class ShapeError(HybridLocError, ValueError):
    """Array dimensions do not agree."""


class NoSignal(HybridLocError):
    """The observation vector is identically zero."""


class SingularFim(HybridLocError):
    """Fisher information matrix is numerically singular."""


class ConfigError(HybridLocError, ValueError):
    """Scenario configuration is invalid."""
