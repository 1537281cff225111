"""Exception hierarchy shared by all lpvff modules."""


class LpvffError(Exception):
    """Base class for every error raised by lpvff."""

    exit_code = 1


class InvalidInputError(LpvffError, ValueError):
    """Arguments violate a documented precondition."""

    exit_code = 2


class ConfigError(InvalidInputError):
    """Experiment configuration cannot be parsed or is inconsistent."""


class PlanningError(LpvffError):
    """The trajectory planner cannot satisfy the requested move."""

    exit_code = 2


class SchedulingError(InvalidInputError):
    """Scheduling variable outside the admissible interval (0, L)."""


class NumericalError(LpvffError):
    """A factorization or solve failed."""

    exit_code = 3


class InstabilityError(LpvffError):
    """Closed-loop simulation diverged or the loop is not stable."""

    exit_code = 4

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample
