"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class InterpcastError(Exception):
    """Base class for all pipeline errors."""


class PreconditionError(InterpcastError, ValueError):
    """An operation was called with inputs that violate its contract."""


# gateway -----------------------------------------------------------------


class TransportError(InterpcastError):
    """The LLM endpoint could not be reached after all retries."""

    retriable = True


class ScriptExhausted(InterpcastError):
    """The scripted provider ran out of responses."""


class RoleMismatch(InterpcastError):
    """The scripted provider expected a different agent role."""


class ParseError(InterpcastError):
    """No JSON object could be extracted from any attempt."""

    def __init__(self, message: str, attempts: int = 0) -> None:
        super().__init__(message)
        self.attempts = attempts


class ValidationError(InterpcastError):
    """Well-formed JSON that kept violating the schema or domain invariants."""

    def __init__(self, message: str, violations: list[str] | None = None, attempts: int = 0) -> None:
        super().__init__(message)
        self.violations = list(violations or [])
        self.attempts = attempts


class MissingVerdict(ValidationError):
    """A proofreader response did not cover every topic index."""


class CoverageError(ValidationError):
    """An enrichment response did not cover every topic index."""


# orchestrator ------------------------------------------------------------


class NoValidTopics(InterpcastError):
    """Topic identification produced no pair that survived review."""


class StageError(InterpcastError):
    """Wraps an error raised inside a pipeline stage with its context."""

    def __init__(self, stage: str, cause: BaseException, topic_index: int | None = None) -> None:
        where = stage if topic_index is None else f"{stage} (topic {topic_index})"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.topic_index = topic_index
        self.cause = cause


class RunInterrupted(InterpcastError):
    """Raised by the ``stop_after`` hook to simulate a killed run."""


class CorruptCheckpoint(InterpcastError):
    """A checkpoint file does not match its sha256 sidecar."""


class ConfigMismatch(InterpcastError):
    """The supplied config differs from the run's frozen snapshot."""


# ingest ------------------------------------------------------------------


class ManifestError(InterpcastError):
    """The book manifest is missing or malformed."""


class SourceMissing(ManifestError):
    """A chapter source file listed in the manifest does not exist."""


class ChapterTooLong(InterpcastError):
    """A chapter body exceeds ``max_chapter_chars``."""


# audio -------------------------------------------------------------------


class EmptyManuscript(InterpcastError):
    """There is no text to synthesize."""


class TtsTransportError(InterpcastError):
    """The TTS endpoint could not be reached or returned an error."""


class TtsFormatError(InterpcastError):
    """The TTS backend returned audio in an unexpected format."""


class RateMismatch(InterpcastError):
    """Audio segments with different sample rates cannot be joined."""


class ChannelMismatch(InterpcastError):
    """Audio segments with different channel counts cannot be joined."""
