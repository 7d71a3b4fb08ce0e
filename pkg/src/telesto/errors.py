"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TelestoError(Exception):
    exit_code = 1


class ConfigError(TelestoError, ValueError):
    exit_code = 2


class DataError(TelestoError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class NumericalError(TelestoError, ArithmeticError):
    exit_code = 4
