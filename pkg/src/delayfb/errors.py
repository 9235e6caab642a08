"""Exception types raised across the package."""


class DelayFeedbackError(Exception):
    """Base class for all package errors."""


class DimensionError(DelayFeedbackError, ValueError):
    pass


class DomainError(DelayFeedbackError, ValueError):
    pass


class SingularMatrixError(DelayFeedbackError, ArithmeticError):
    pass


class NumericalFailureError(DelayFeedbackError, ArithmeticError):
    pass


class NotStabilizingError(DelayFeedbackError):
    """The vertex Lyapunov inequality fails; ``vertex`` names the offending gain."""

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex


class InvalidLyapunovError(DelayFeedbackError, ValueError):
    pass


class InfeasibleError(DelayFeedbackError):
    pass


class ScalingTooSmallError(DelayFeedbackError, ValueError):
    def __init__(self, message, Rb):
        super().__init__(message)
        self.Rb = Rb


class InvalidBaseStepError(DelayFeedbackError, ValueError):
    pass


class GridMismatchError(DelayFeedbackError, ValueError):
    pass


class ContractViolation(DelayFeedbackError, AssertionError):
    pass


class ConfigurationError(DelayFeedbackError, ValueError):
    pass


class BadBracketError(DelayFeedbackError, ValueError):
    pass
