"""Exception hierarchy shared by the pipeline stages.

Each class carries the CLI exit code it maps to.
"""


class TopicGridError(Exception):
    exit_code = 1


class ConfigError(TopicGridError, ValueError):
    exit_code = 1


class DataError(TopicGridError, ValueError):
    exit_code = 2


class NumericalError(TopicGridError, ArithmeticError):
    exit_code = 3


class ShapeError(TopicGridError, ValueError):
    exit_code = 3

    def __init__(self, what: str, expected, got):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(got)}")
        self.expected = tuple(expected)
        self.got = tuple(got)
