"""Exception types raised across dro_kit."""


class DroKitError(Exception):
    """Base class for all package errors."""


class NotTwiceDifferentiable(DroKitError, ValueError):
    pass


class NotAbsolutelyContinuous(DroKitError, ValueError):
    pass


class BadRatio(DroKitError, ValueError):
    pass


class ParseError(DroKitError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatch(DroKitError, ValueError):
    pass


class BracketFailure(DroKitError, RuntimeError):
    pass


class MissingConstant(DroKitError, ValueError):
    def __init__(self, field, detail=""):
        self.field = field
        msg = f"missing constant {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnboundedLoss(DroKitError, ValueError):
    pass


class TraceIncomplete(DroKitError, ValueError):
    pass


class ConfigError(DroKitError, ValueError):
    pass


class DivergenceDetected(DroKitError, RuntimeError):
    """Raised when an optimizer run blows up; the partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class LeftCertifiedRegion(DivergenceDetected):
    """An iterate left the box on which the loss constants were certified."""
