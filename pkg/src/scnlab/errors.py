"""Exception hierarchy shared by all scnlab modules."""


class ScnError(Exception):
    """Base class for every error raised by scnlab."""


class InvalidInputError(ScnError, ValueError):
    """An argument violates an operation's precondition (shape, range, ...)."""


class ConfigError(InvalidInputError):
    """A configuration object is internally inconsistent."""


class FormatError(ScnError, ValueError):
    """A file could not be parsed. The message names the offending file."""


class CheckpointError(FormatError):
    """A checkpoint file has a bad magic, version, kind or layout."""
