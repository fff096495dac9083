"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and numerical
breakdowns from :class:`NumericalError`; the CLI maps the two families to
distinct exit codes.
"""


class NetriskError(Exception):
    """Base class for all package errors."""


class ValidationError(NetriskError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(NetriskError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class ShapeMismatch(ValidationError):
    pass


class NegativeEntry(ValidationError):
    pass


class ZeroTotal(ValidationError):
    pass


class InsufficientPeriods(ValidationError):
    pass


class OutOfRangeDistance(ValidationError):
    pass


class InvalidCovariance(ValidationError):
    pass


class NonPositiveArgument(ValidationError):
    pass


class MissingCalibration(ValidationError):
    pass


class TooFewAssets(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class UnstableNetwork(NumericalError):
    def __init__(self, radius: float, threshold: float, label: str = ""):
        self.radius = radius
        self.threshold = threshold
        where = f" ({label})" if label else ""
        super().__init__(
            f"spectral radius {radius:.6g}{where} is not below {threshold:.6g}"
        )


class NonConvergence(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NoSolution(NumericalError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


class OptimizerFailure(NumericalError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
