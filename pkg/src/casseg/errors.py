"""Exception types raised across the toolkit.

All of them derive from ``ValueError`` so callers that only care about
"bad input" can catch one thing.
"""


class CassegError(ValueError):
    pass


class ShapeError(CassegError):
    pass


class LabelError(CassegError):
    pass


class StateError(CassegError):
    pass


class NumericError(CassegError):
    pass


class DataError(CassegError):
    pass


class GenerationError(CassegError):
    pass


class ParameterError(CassegError):
    pass


class ConfigError(CassegError):
    pass


class ParseError(CassegError):
    """Malformed PGM payload. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
