"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class PbrFitError(Exception):
    exit_code = 1


class ConfigError(PbrFitError, ValueError):
    exit_code = 2


class DataIOError(PbrFitError, OSError):
    exit_code = 3


class EmptyInputError(PbrFitError, ValueError):
    exit_code = 4


class NumericError(PbrFitError, ArithmeticError):
    exit_code = 5


class NonFiniteError(NumericError, ValueError):
    """A coordinate or gradient was NaN or infinite."""

    code = "non_finite"


class OutOfBoundsError(PbrFitError, ValueError):
    """A sample point fell outside the field's bounding box."""

    code = "out_of_bounds"
    exit_code = 2


class ShapeError(PbrFitError, ValueError):
    exit_code = 2
