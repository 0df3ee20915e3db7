"""Exception types shared across the package."""


class QbwnnError(Exception):
    """Base class for package errors."""


class DomainError(QbwnnError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(QbwnnError, ValueError):
    """A configuration key is unknown, mistyped or out of bounds."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(QbwnnError, ValueError):
    """An input file is malformed or inconsistent."""


class TrainingDiverged(QbwnnError, RuntimeError):
    """Raised when the training loss becomes non-finite or explodes."""

    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
