"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to a
stable category: configuration, data, backend, I/O or internal.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_BACKEND = 5
EXIT_IO = 6
EXIT_INTERNAL = 70


class SlotRefineError(Exception):
    exit_code = EXIT_INTERNAL

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.stage}] {base}" if self.stage else base


class ConfigError(SlotRefineError):
    exit_code = EXIT_CONFIG


class DataError(SlotRefineError):
    exit_code = EXIT_DATA


class StorageError(SlotRefineError):
    """Filesystem failures (missing input, unwritable output)."""

    exit_code = EXIT_IO


class InternalError(SlotRefineError):
    exit_code = EXIT_INTERNAL


# -- data errors -------------------------------------------------------------


class ManifestError(DataError):
    """Manifest validation failed; ``issues`` lists every offending line."""

    def __init__(self, message: str, issues=(), **kw):
        super().__init__(message, **kw)
        self.issues = list(issues)


class ManifestParseError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class NonFiniteScoreError(ManifestError):
    pass


class MissingLabelError(DataError):
    pass


class SingleClassError(DataError):
    pass


class DecodeError(DataError):
    pass


# -- backend errors ----------------------------------------------------------


class BackendError(SlotRefineError):
    exit_code = EXIT_BACKEND
    retryable = False


class TransportError(BackendError):
    retryable = True


class BackendTimeout(TransportError):
    pass


class MalformedResponseError(BackendError):
    pass


class AuthError(BackendError):
    pass


class RequestTooLargeError(BackendError):
    pass
