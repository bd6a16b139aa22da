class DqvcError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(DqvcError, ValueError):
    pass


class DomainError(InvalidInputError):
    pass


class ConfigError(DqvcError, ValueError):
    pass


class DataValidationError(DqvcError, ValueError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class NumericalError(DqvcError, ArithmeticError):
    pass


class UndefinedMetricError(DqvcError, ValueError):
    pass
