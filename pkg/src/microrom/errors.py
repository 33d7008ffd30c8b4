"""Exception types shared across the package.

ConfigError signals bad user input (CLI exit code 2), NumericalError and its
subclasses signal runtime numerical failures (CLI exit code 3).
"""


class MicroromError(Exception):
    """Base class for package errors."""


class ConfigError(MicroromError):
    """Invalid configuration, schema violation, or inconsistent inputs."""


class NumericalError(MicroromError):
    """Numerical failure at run time (solver breakdown, divergence, ...)."""


class SolveError(NumericalError):
    """Linear solve failed or did not meet the residual tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class VacuousModelError(NumericalError):
    """Every feature was pruned; the encoder has no active basis left."""

    def __init__(self, msg, gamma=None):
        super().__init__(msg)
        self.gamma = gamma
