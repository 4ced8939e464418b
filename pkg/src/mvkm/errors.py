"""Exception types shared across the package."""


class MvkmError(Exception):
    """Base class for all package errors."""


class ParseError(MvkmError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(MvkmError):
    """Dataset invariant violated (duplicate timeline slots, bad indices, ...)."""


class RangeError(MvkmError):
    """A feedback value outside its allowed range."""


class ConfigError(MvkmError):
    """Invalid configuration or argument values."""


class TrainingError(MvkmError):
    """Training diverged or could not proceed."""


class DegenerateInputError(MvkmError):
    """Input too degenerate for the requested analysis (e.g. identical rows)."""
