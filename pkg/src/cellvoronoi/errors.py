"""Exception hierarchy shared by all modules."""


class LocatorError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LocatorError):
    """A network or scan file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(LocatorError):
    """Input parsed but violates a data-model invariant."""


class FormatError(LocatorError):
    """A precompute table file is corrupt, truncated or of an unknown version."""


class StaleTableError(LocatorError):
    """A precompute table was built for a different network."""


class NoUsableCellsError(LocatorError):
    """A scan contains no cell that resolves in the network database."""
