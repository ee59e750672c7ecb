"""Exception types shared across the package.

Every error raised on bad input derives from AuditError so the CLI can
map any validation failure to exit code 1 with a module-qualified message.
"""


class AuditError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AuditError):
    """A file violates its format contract.

    Carries the offending path and, when known, the 1-based line number.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class ValidationError(AuditError):
    """An in-memory value or argument violates an invariant."""


class CalibrationError(ValidationError):
    """No similarity cutoff reaches the requested precision.

    best_precision holds the highest precision achievable on the given
    labeled pairs, so callers can report how far off the target was.
    """

    def __init__(self, message: str, best_precision: float):
        self.best_precision = best_precision
        super().__init__(message)


class InsufficientPoolError(ValidationError):
    """A dataset build ran out of eligible queries, topics, or documents."""
