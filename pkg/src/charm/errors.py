"""Exception hierarchy shared by the library and the CLI."""


class CharmError(Exception):
    """Base class for all library errors."""


class ConfigError(CharmError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class NumericError(CharmError, ArithmeticError):
    """A numerical precondition failed (zero-power channel, singular system...)."""


class EmptySupportError(NumericError):
    """Peak extraction found nothing to work with."""


class ProjectionError(NumericError):
    """The receive-side projection matrix could not be built."""


class ResultsParseError(CharmError, ValueError):
    """A results or scenario file is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
