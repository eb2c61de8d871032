"""Exception types shared across the package.

The CLI maps these onto process exit codes, see :mod:`ltcamtrap.cli`.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


class InputMismatchError(ValueError):
    """Inputs that are individually valid but do not fit together (exit code 3)."""


class MalformedImageError(ValueError):
    pass


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateModelError(ArithmeticError):
    pass


class TrainingError(RuntimeError):
    """Raised when a training step produces a non-finite loss (exit code 4)."""

    def __init__(self, message, sequence_ids=()):
        super().__init__(message)
        self.sequence_ids = list(sequence_ids)
