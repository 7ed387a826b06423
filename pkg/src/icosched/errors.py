"""Exception types shared across the package."""


class IcoError(Exception):
    """Base class for every error raised by icosched."""


class DegenerateFit(IcoError):
    """A regression has too few points or no spread in its input."""


class InsufficientData(IcoError):
    """A training set is empty or smaller than the model can split."""


class ShapeError(IcoError, ValueError):
    """Array lengths or feature dimensionality do not line up."""


class IncompleteSnapshot(IcoError):
    """A node snapshot is missing a field needed to build features."""

    def __init__(self, field: str):
        super().__init__(f"node snapshot is missing field {field!r}")
        self.field = field


class ParseError(IcoError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotFound(IcoError, KeyError):
    pass


class EmptyInput(IcoError, ValueError):
    pass


class InsufficientNodes(IcoError, ValueError):
    pass


class ConfigError(IcoError):
    """Configuration failed validation; ``key`` is the dotted path at fault."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
