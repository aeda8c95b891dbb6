"""Exception types raised across the package."""


class FracFlatError(Exception):
    """Base class for all package errors."""


class InvalidMetricError(FracFlatError, ValueError):
    pass


class AdmissibilityError(FracFlatError, ValueError):
    pass


class ChartEvaluationError(FracFlatError):
    def __init__(self, point, reason="non-finite value"):
        self.point = point
        super().__init__(f"chart not evaluable at point {list(map(float, point))}: {reason}")


class NotOnBoundaryError(FracFlatError, ValueError):
    pass


class ResolutionError(FracFlatError, ValueError):
    """A discretization does not resolve the requested quantity."""

    def __init__(self, message, suggested_step=None):
        self.suggested_step = suggested_step
        super().__init__(message)


class GeometryError(FracFlatError, ValueError):
    pass


class ConvergenceError(FracFlatError):
    def __init__(self, message, trace=None):
        self.trace = trace or []
        super().__init__(message)


class GrowthError(FracFlatError, ValueError):
    pass


class PreconditionError(FracFlatError, ValueError):
    pass


class FitError(FracFlatError):
    def __init__(self, message, table=None):
        self.table = table
        super().__init__(message)


class ConfigError(FracFlatError, ValueError):
    """Invalid configuration; messages read ``"<field>: <problem>"``."""

    def __init__(self, message):
        self.field = message.split(":", 1)[0] if ":" in message else None
        super().__init__(message)
