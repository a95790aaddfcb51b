"""Exception hierarchy shared by every stage.

Each family maps onto one CLI exit code (see :mod:`epiforge.cli`).
"""


class EpiforgeError(Exception):
    exit_code = 1


class ConfigError(EpiforgeError, ValueError):
    """Invalid configuration or parameter values."""

    exit_code = 2


class ParameterError(ConfigError):
    pass


class DataError(EpiforgeError, ValueError):
    """Input data is missing, malformed or insufficient."""

    exit_code = 3


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class HistoryError(DataError):
    """Not enough history to build model inputs."""

    def __init__(self, message, shortfall=None):
        super().__init__(message)
        self.shortfall = shortfall


class NumericError(EpiforgeError, ArithmeticError):
    exit_code = 4
