"""Exception types shared across the toolkit."""


class MfdlError(Exception):
    """Base class for all toolkit errors."""


class DomainError(MfdlError, ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(MfdlError, ValueError):
    """Array dimensions do not match."""


class PreconditionError(MfdlError, ValueError):
    """A documented precondition of an operation is violated."""


class CapabilityError(MfdlError, NotImplementedError):
    """The requested configuration is outside what is supported."""


class NumericError(MfdlError, ArithmeticError):
    """Non-finite values or divergence during an iterative computation.

    ``last`` carries the last finite iterate (or partial result) when one
    is available.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class IndefiniteError(NumericError):
    """Non-positive curvature encountered where positive definiteness is required."""


class StagnationError(NumericError):
    """An inner solver made no progress."""


class DivergenceError(NumericError):
    """Iterates left the admissible region."""
