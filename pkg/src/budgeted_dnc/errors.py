"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class BudgetedDNCError(Exception):
    exit_code = 1


class ConfigError(BudgetedDNCError, ValueError):
    exit_code = 2


class DataError(BudgetedDNCError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class GenerationError(DataError):
    def __init__(self, message, retries=0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries


class NoPathError(DataError):
    pass


class CapacityError(BudgetedDNCError, RuntimeError):
    exit_code = 4


class DivergenceError(BudgetedDNCError, RuntimeError):
    exit_code = 5

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(BudgetedDNCError, ValueError):
    exit_code = 3
