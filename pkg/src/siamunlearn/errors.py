"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: configuration problems exit with 2,
data/format/path problems with 3 and numerical divergence with 4.
"""


class SiamUnlearnError(Exception):
    exit_code = 1


class ConfigError(SiamUnlearnError, ValueError):
    exit_code = 2


class DimensionError(SiamUnlearnError, ValueError):
    exit_code = 2


class DataError(SiamUnlearnError):
    exit_code = 3


class FormatError(DataError, ValueError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MetricError(SiamUnlearnError, ValueError):
    exit_code = 3


class NumericalDegeneracyError(SiamUnlearnError, ArithmeticError):
    exit_code = 4


class DivergenceError(SiamUnlearnError, ArithmeticError):
    """Training produced a non-finite value.

    ``step`` is the optimisation step at which it was detected and ``tag``
    names the parameter or method involved.
    """

    exit_code = 4

    def __init__(self, message: str, step: int | None = None, tag: str | None = None):
        super().__init__(message)
        self.step = step
        self.tag = tag
