"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ClhadError(Exception):
    exit_code = 1


class ArgumentError(ClhadError, ValueError):
    exit_code = 2


class ConfigError(ArgumentError):
    """Config document violates the schema; message names the field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(ClhadError, ValueError):
    exit_code = 3


class FormatError(ClhadError):
    exit_code = 3


class DataError(ClhadError, ValueError):
    exit_code = 3


class SimilarityError(DataError):
    pass


class SelectionError(DataError):
    pass


class IntegrityError(ClhadError):
    exit_code = 3


class MetricError(DataError):
    pass


class DivergenceError(ClhadError, FloatingPointError):
    exit_code = 4
