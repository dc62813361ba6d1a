class P3OError(Exception):
    """Base class for all package errors."""


class ConfigError(P3OError, ValueError):
    """Invalid configuration or argument combination."""


class NumericFailure(P3OError, ArithmeticError):
    """A numeric routine produced a non-recoverable result."""


class ModelDivergenceError(NumericFailure):
    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class BeliefCollapseError(NumericFailure):
    """Every belief particle received zero observation likelihood."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class AllParticlesCollapsedError(NumericFailure):
    pass


class NumericOverflowError(NumericFailure):
    def __init__(self, message: str, step=None):
        super().__init__(message)
        self.step = step


class InvalidModelError(NumericFailure):
    pass


class ImpossibleHistoryError(P3OError, ValueError):
    """An observation-action prefix has zero probability under the model."""


class NoSamplesError(P3OError, ValueError):
    pass
