"""Exception hierarchy shared by the library and the CLI."""


class NilmError(Exception):
    """Base class for every error raised by glunilm."""


class ShapeError(NilmError, ValueError):
    """Array shapes disagree with what an operation expects."""


class ConfigError(NilmError, ValueError):
    """A configuration value violates an invariant."""


class DataError(NilmError, ValueError):
    """Input data is malformed or unusable."""


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class MonotonicityError(DataError):
    """Timestamps are not strictly increasing."""


class CoverageError(DataError):
    """Some output index received no window prediction."""


class CheckpointError(NilmError):
    """Base class for checkpoint I/O failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointPayloadMissingError(CheckpointError):
    pass


class CheckpointSizeError(CheckpointError):
    """Payload length disagrees with the size implied by the header config."""

