"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class EvsnnError(Exception):
    exit_code = 1


class ConfigError(EvsnnError):
    exit_code = 2


class DataError(EvsnnError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BoundsError(DataError):
    pass


class FormatError(DataError):
    pass


class TruncationError(FormatError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CompatibilityError(DataError):
    pass


class ShapeError(EvsnnError):
    exit_code = 3


class DimensionError(ShapeError):
    pass


class ConsistencyError(ShapeError):
    pass


class DomainError(EvsnnError, ValueError):
    exit_code = 2


class NumericError(EvsnnError, ArithmeticError):
    exit_code = 4
