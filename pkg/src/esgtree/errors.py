"""Exception hierarchy shared by every module."""


class EsgTreeError(Exception):
    """Base class for all package errors."""


class InputError(EsgTreeError, ValueError):
    """Bad user input: parse failures, malformed files, invalid config."""


class DomainError(EsgTreeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AlignmentError(InputError):
    """Series could not be aligned on a common date axis."""


class NumericalError(EsgTreeError, ArithmeticError):
    """A computation produced an unusable result."""


class DegenerateVolatilityError(NumericalError):
    """Sample variance is zero, so no volatility can be estimated."""


class NonPositivePriceError(NumericalError):
    """Compounding produced a price at or below zero."""


class SingularityError(NumericalError):
    """Market price of risk too close to zero for the informed-trader optimum."""


class ComplexVolatilityError(NumericalError):
    """The squared effective volatility of the log informed tree is negative."""
