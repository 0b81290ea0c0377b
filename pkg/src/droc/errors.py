"""Exception hierarchy shared by every droc module."""


class DROCError(Exception):
    """Base class for all errors raised by droc."""


class NumericalBlowup(DROCError, ArithmeticError):
    """A state or derivative became non-finite or exceeded the blowup guard."""


class DivisionByZero(DROCError, ZeroDivisionError):
    """A model evaluation divided by a vanishing state component."""


class OutOfDomain(DROCError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionMismatch(DROCError, ValueError):
    pass


class TooFewPoints(DROCError, ValueError):
    pass


class InvalidDensity(DROCError, ValueError):
    pass


class MassMismatch(DROCError, ValueError):
    pass


class InfeasibleSupport(DROCError, ValueError):
    """No distribution on the discrete support matches the prescribed moments."""

    def __init__(self, message="moment-infeasible support"):
        super().__init__(message)


class InternalError(DROCError, RuntimeError):
    pass


class MissingSensitivities(DROCError, ValueError):
    pass


class LineSearchFailure(DROCError, RuntimeError):
    pass


class MaxIterations(DROCError, RuntimeError):
    """The outer loop hit its cap. ``report`` carries the best iterate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(DROCError, ValueError):
    pass
