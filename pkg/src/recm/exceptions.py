"""Exception hierarchy shared across the package."""


class RecmError(Exception):
    """Base class for all package errors."""


class ShapeError(RecmError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(RecmError, ValueError):
    """A documented precondition was violated."""


class NonFiniteClosureError(RecmError):
    """Closure of a generating set exceeded the element budget."""


class BudgetError(RecmError):
    """Problem size exceeds the exact solver budget."""


class NonFiniteLossError(RecmError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}
