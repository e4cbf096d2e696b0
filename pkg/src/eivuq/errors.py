"""Exception hierarchy. The CLI maps each family onto an exit code."""


class EivuqError(Exception):
    """Base class for all library errors."""


class ConfigError(EivuqError, ValueError):
    """Malformed configuration or invalid argument combination."""


class DataError(EivuqError, ValueError):
    """Input data that cannot be used (shape, label, or lookup problems)."""


class NumericalError(EivuqError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable result."""


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class SupportOverflowError(NumericalError):
    def __init__(self, size: int, max_support: int):
        super().__init__(
            f"joint error support has {size} points, exceeding max_support={max_support}"
        )
        self.size = size
        self.max_support = max_support
