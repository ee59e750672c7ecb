class ExportError(Exception):
    """Any failure this package can anticipate."""


class FormatError(ExportError):
    """Malformed input file; cites path and line where known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ModelError(ExportError):
    """Encoder could not be loaded or produced unusable output."""
