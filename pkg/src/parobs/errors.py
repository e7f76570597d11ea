"""Exception hierarchy shared by all parobs modules."""


class ParobsError(Exception):
    """Base class for every error raised by this package."""


class NonUniformSourceError(ParobsError, ValueError):
    """The source term is not bounded away from zero (``f <= -c0 < 0`` fails)."""


class GridTooSmallError(ParobsError, ValueError):
    pass


class EmptyRegionError(ParobsError, ValueError):
    pass


class OutOfDomainError(ParobsError, ValueError):
    pass


class SolverDivergedError(ParobsError, RuntimeError):
    pass


class PolicyCycleError(ParobsError, RuntimeError):
    pass


class NoBoundaryError(ParobsError, ValueError):
    pass


class MultivaluedGraphError(ParobsError, ValueError):
    pass


class DegenerateFieldError(ParobsError, ValueError):
    pass


class RadiusUnderresolvedError(ParobsError, ValueError):
    pass


class NotOnBoundaryError(ParobsError, ValueError):
    """The requested centre is not a free boundary point of the field."""


class NegativeFieldError(ParobsError, ValueError):
    pass


class ConfigError(ParobsError, ValueError):
    """Invalid experiment configuration; ``line`` points into the source file when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        msg = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {msg}"
        return msg
