"""Exception hierarchy shared across the library.

Everything user-facing derives from :class:`ChristoffelError` so the CLI can
map library failures onto its exit-code contract in one place.
"""


class ChristoffelError(Exception):
    """Base class for all errors raised by this package."""


class ExpressionError(ChristoffelError):
    """Base class for expression parsing and evaluation errors."""


class ParseError(ExpressionError):
    """Syntax error in an expression string.

    Attributes:
        position: 0-based character offset of the offending token.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (offset {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    """An identifier that is neither a coordinate name nor a known function."""

    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier '{name}'", position)
        self.name = name


class DomainError(ExpressionError):
    """Evaluation left the domain of a function (1/0, log of nonpositive, ...)."""

    def __init__(self, reason: str, subexpression: str):
        super().__init__(f"{reason} in '{subexpression}'")
        self.reason = reason
        self.subexpression = subexpression


class ChartError(ChristoffelError):
    """Base class for coordinate-map failures."""


class SingularMapError(ChartError):
    """The forward Jacobian determinant is numerically zero."""


class InverseMismatchError(ChartError):
    """Supplied inverse expressions are inconsistent with the forward map."""


class MetricError(ChristoffelError):
    """Base class for metric-field failures."""


class AsymmetricMetricError(MetricError):
    """Metric component expressions are not symmetric."""


class SingularMetricError(MetricError):
    """The metric determinant is numerically zero at the evaluation point."""


class InconsistentSystemError(ChristoffelError):
    """The coefficient constraint system has no solution within tolerance.

    This signals an assembly bug rather than bad user input: the system is
    solvable in closed form for every invertible symmetric metric.
    """


class GenericityError(ChristoffelError):
    """Uniqueness verdicts disagree between two independent metric samples."""
