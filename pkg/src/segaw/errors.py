"""Exception types shared across the package."""


class SegawError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SegawError, ValueError):
    """Array dimensions do not match what an operation requires."""


class InputError(SegawError, ValueError):
    """Caller-supplied data is unusable (wrong sample rate, empty corpus, ...)."""


class ConfigError(SegawError, ValueError):
    """Bad configuration file or option value."""


class FormatError(SegawError, ValueError):
    """A binary or text file does not follow its declared format.

    ``offset`` carries the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(SegawError, RuntimeError):
    """Optimization produced a non-finite value or otherwise diverged."""


class CompatibilityError(SegawError, RuntimeError):
    """Two artifacts (e.g. an index and a checkpoint) do not belong together."""
