"""Exception hierarchy shared by every module."""


class SagdivError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SagdivError, ValueError):
    pass


class DegenerateDataError(SagdivError, ValueError):
    pass


class NumericalError(SagdivError, ArithmeticError):
    pass


class SearchFailureError(SagdivError, RuntimeError):
    pass


class DivergenceError(SagdivError, ArithmeticError):
    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


class UnsupportedScenarioError(SagdivError, ValueError):
    pass


class IngestionError(SagdivError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + message)


class ConfigError(SagdivError, ValueError):
    def __init__(self, message: str, keys=()):
        self.keys = list(keys)
        super().__init__(message)
