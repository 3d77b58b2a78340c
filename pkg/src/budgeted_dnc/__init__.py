"""Differentiable Neural Computer with explicit planning budgets.

Library layout: ``memory`` (addressing math), ``controller``/``dnc`` (the
model), ``episode`` (phase state machine), ``budget`` (planning policies),
``tasks`` (generators and oracles), ``trainer``, ``eval`` and ``cli``.
"""

from .budget import BudgetPolicy
from .dnc import DNC
from .errors import (BudgetedDNCError, CapacityError, CheckpointError, ConfigError, DataError, DivergenceError,
                     ShapeError)

__version__ = "0.1.0"

__all__ = ["DNC", "BudgetPolicy", "BudgetedDNCError", "CapacityError", "CheckpointError", "ConfigError",
           "DataError", "DivergenceError", "ShapeError", "__version__"]
