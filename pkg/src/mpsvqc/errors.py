"""Exception hierarchy shared by every module.

Each class maps to one error kind named in the module contracts; the CLI
turns ``ConfigError`` and friends into exit code 2 and everything else into
exit code 1.
"""


class MpsVqcError(Exception):
    """Base class for all package errors."""


class DimensionError(MpsVqcError, ValueError):
    pass


class LabelCollisionError(MpsVqcError, ValueError):
    pass


class NumericError(MpsVqcError, ArithmeticError):
    pass


class ConfigError(MpsVqcError, ValueError):
    pass


class OracleScaleError(MpsVqcError, ValueError):
    pass


class QubitIndexError(MpsVqcError, IndexError):
    pass


class ScheduleError(MpsVqcError, ValueError):
    pass


class LabelError(MpsVqcError, ValueError):
    pass


class MetricError(MpsVqcError, ValueError):
    pass


class FormatError(MpsVqcError, ValueError):
    pass


class TruncatedFileError(MpsVqcError, IOError):
    pass


class RangeError(MpsVqcError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DivergenceError(MpsVqcError, RuntimeError):
    def __init__(self, message, step=None, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good
