"""Kernel-regularized identification of dynamic LPV feedforward for motion systems."""

from .errors import (
    ConfigError,
    InstabilityError,
    InvalidInputError,
    LpvffError,
    NumericalError,
    PlanningError,
    SchedulingError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InstabilityError",
    "InvalidInputError",
    "LpvffError",
    "NumericalError",
    "PlanningError",
    "SchedulingError",
]
