"""Exception types raised by samplers, scores and estimators."""


class GibbsGeomError(Exception):
    """Base class for all package errors."""


class InvalidParams(GibbsGeomError, ValueError):
    """Parameters outside the supported or admissible range."""


class ClanOverflow(GibbsGeomError):
    """An ancestor clan grew past the configured point or padding budget.

    Usually means (tau, beta) sits too close to the edge of the
    admissibility region.
    """


class DomainError(GibbsGeomError, ValueError):
    """A score was evaluated at a point outside its domain."""


class MissingMarks(GibbsGeomError, ValueError):
    pass


class MissingClanData(GibbsGeomError, ValueError):
    pass


class WindowTooSmall(GibbsGeomError):
    pass


class DecayNotDetected(GibbsGeomError):
    pass


class DegenerateVariance(GibbsGeomError):
    pass


class InsufficientTail(GibbsGeomError):
    pass
