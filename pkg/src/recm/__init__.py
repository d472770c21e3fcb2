"""Relaxed equivariant layers whose symmetry constraint is modulated by a recurrent state."""

from .exceptions import BudgetError, ContractError, NonFiniteClosureError, NonFiniteLossError, RecmError, ShapeError

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ContractError",
    "NonFiniteClosureError",
    "NonFiniteLossError",
    "RecmError",
    "ShapeError",
]
