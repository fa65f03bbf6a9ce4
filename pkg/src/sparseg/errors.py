class SparsegError(Exception):
    """Base class for errors raised by this package."""


class EmptyInputError(SparsegError, ValueError):
    pass


class FormatError(SparsegError, ValueError):
    pass


class ShapeError(SparsegError, ValueError):
    pass


class ParameterError(SparsegError, ValueError):
    pass


class LocalizationError(SparsegError):
    pass


class DivergenceError(SparsegError):
    """The evolving interior vanished. ``trace`` holds the energy history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
