"""Exception types shared across the package.

Each carries the CLI exit code it maps to.
"""


class UpllError(Exception):
    exit_code = 1


class ConfigError(UpllError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    pass


class DataFormatError(UpllError, ValueError):
    exit_code = 3


class AuditUnavailableError(UpllError):
    exit_code = 2


class InvariantError(UpllError, ValueError):
    exit_code = 4


class NumericalError(UpllError, ArithmeticError):
    exit_code = 4
