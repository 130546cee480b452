"""Typed exceptions raised across the package.

Every failure mode callers are expected to handle has its own class; all of
them derive from TodflowError so the CLI can map them to exit codes.
"""

from __future__ import annotations


class TodflowError(Exception):
    """Base class for all package-specific errors."""


class EmptyCorpusError(TodflowError):
    """A corpus-level operation received no trajectories."""


class ParseError(TodflowError):
    """A corpus file could not be decoded."""

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class SchemaError(TodflowError):
    """A decoded record is missing or misusing a required field."""

    def __init__(self, message: str, *, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"field {field!r}: {message}")


class VocabularyError(TodflowError):
    """An act label or index does not belong to the vocabulary in scope."""


class GraphFormatError(TodflowError):
    """A serialized graph document is invalid; carries a JSON pointer."""

    def __init__(self, message: str, *, pointer: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class EditError(TodflowError):
    """A graph edit referenced a missing act, target, or clause."""


class NoCandidatesError(TodflowError):
    """A selection operation received an empty candidate list."""


class MissingCandidatesError(TodflowError):
    """A replay or oracle provider has no entry for the requested turn."""


class ProviderSpawnError(TodflowError):
    """An external provider process could not be started or died."""


class ProviderTimeoutError(TodflowError):
    """An external provider did not answer within the configured timeout."""


class ProtocolError(TodflowError):
    """An external provider sent a malformed or out-of-order reply."""


class SynthError(TodflowError):
    """Synthetic domain generation failed validation after bounded retries."""


class NoTurnsError(TodflowError):
    """An evaluation aggregate was requested over zero scored turns."""


class BenchmarkError(TodflowError):
    """A benchmark run aborted (for example, excessive provider failures)."""
