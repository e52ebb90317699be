"""Exception types shared across the package."""


class DenseragError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DenseragError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(DenseragError, ValueError):
    """Invalid input data, e.g. duplicate passage ids."""


class UnknownIdError(DenseragError, KeyError):
    """A requested passage id is not present in the store/index."""

    def __init__(self, passage_id):
        super().__init__(passage_id)
        self.passage_id = passage_id

    def __str__(self):
        return f"unknown passage id: {self.passage_id}"


class FormatError(DenseragError, ValueError):
    """Base class for binary file format errors."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""

    def __init__(self, expected: bytes, got: bytes):
        super().__init__(f"bad magic: expected {expected!r}, got {got!r}")
        self.expected = expected
        self.got = got


class BadVersionError(FormatError):
    """The file carries an unsupported format version."""

    def __init__(self, supported: int, got: int):
        super().__init__(f"unsupported format version {got} (supported: {supported})")
        self.supported = supported
        self.got = got


class TruncatedError(FormatError):
    """The file ends before the data promised by its header."""


class TransportError(DenseragError, RuntimeError):
    """A remote call failed after all retries.

    ``failed_indices`` holds the positions (within the caller's batch) of
    the inputs whose results were lost.
    """

    def __init__(self, message: str, failed_indices=None):
        super().__init__(message)
        self.failed_indices = list(failed_indices) if failed_indices else []


class StageError(DenseragError, RuntimeError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
