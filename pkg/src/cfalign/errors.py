"""Shared exception types.

Every raised error carries enough context (shapes, counts, names) to debug
a failing call without a stack inspector.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class ContractError(ValueError):
    """A precondition on values (not shapes) was violated."""


class ConfigError(ValueError):
    """A run or dataset configuration failed validation."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class DivergenceError(FloatingPointError):
    """A non-finite loss value appeared during training."""
