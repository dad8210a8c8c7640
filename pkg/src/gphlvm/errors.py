"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""


class GphlvmError(Exception):
    exit_code = 1


class ValidationError(GphlvmError, ValueError):
    """Bad input or configuration, detected before any heavy compute."""

    exit_code = 2


class DimensionError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class CapabilityError(ValidationError):
    """The model lacks a component the operation needs (e.g. back constraints)."""


class CompatibilityError(ValidationError):
    pass


class NumericalError(GphlvmError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, *, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


class DataIOError(GphlvmError, OSError):
    exit_code = 4
