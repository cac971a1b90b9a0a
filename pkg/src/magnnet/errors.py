"""Shared exception types."""


class MagnnetError(Exception):
    """Base class for package errors."""


class ShapeError(MagnnetError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(MagnnetError, ArithmeticError):
    """A computation produced NaN or Inf."""


class NoPathError(MagnnetError):
    """Search exhausted without reaching the goal."""


class PlacementError(MagnnetError):
    """Grid too small / too crowded to place all entities."""


class InfeasibleAssignmentError(MagnnetError):
    """No full matching exists on finite-cost pairs."""


class InvalidAssignmentError(MagnnetError, ValueError):
    """Assignment references an infinite-cost or out-of-range pair."""


class CheckpointMismatchError(MagnnetError):
    """Checkpoint capacity does not cover the requested scenario."""
