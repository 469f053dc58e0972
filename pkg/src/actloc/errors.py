"""Exception types shared across the package."""


class ActlocError(Exception):
    """Base class for all errors raised by actloc."""


class InvalidInputError(ActlocError, ValueError):
    """An argument or record violates a documented precondition."""


class FormatError(ActlocError):
    """An input file could not be interpreted (too many malformed records, empty file)."""


class EmptyStatisticsError(ActlocError, ValueError):
    """A statistic was requested over a sample that has no usable values."""


class UndefinedStatisticError(ActlocError, ValueError):
    """A statistic is mathematically undefined for the given input (e.g. constant vector)."""


class GridTooLargeError(ActlocError, MemoryError):
    """A KDE grid would exceed the configured cell budget."""
