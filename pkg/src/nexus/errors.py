"""Exception hierarchy for the whole package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
BackendError -> 3, ParseError -> 4.
"""

from __future__ import annotations


class NexusError(Exception):
    """Base class for all package errors."""


class ConfigError(NexusError):
    """Invalid or inconsistent run configuration."""


# --- data / ingest ---------------------------------------------------------


class DataError(NexusError):
    """Problems with input data files or task construction."""


class MalformedCsv(DataError):
    pass


class DuplicateDate(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class WindowTooShort(DataError):
    pass


class HistoryTooShort(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class BadSpec(DataError):
    pass


class EmptyInput(DataError):
    pass


class MissingRuns(DataError):
    pass


class TaskSetMismatch(DataError):
    pass


# --- metrics ---------------------------------------------------------------


class MetricError(NexusError):
    """Invalid arguments to an evaluation metric."""


class LengthMismatch(MetricError):
    pass


class NearZeroActual(MetricError):
    """Relative error undefined: an actual value is too close to zero."""


class NonPositiveBaseline(MetricError):
    pass


# --- backends --------------------------------------------------------------


class BackendError(NexusError):
    """LLM backend failures."""


class AuthMissing(BackendError):
    pass


class TransientExhausted(BackendError):
    """All retries on transient HTTP failures were consumed."""


class ProviderRejected(BackendError):
    """Non-retryable provider error (4xx other than 429)."""


class ScriptExhausted(BackendError):
    """A scripted backend ran out of canned responses."""


# --- parsing (subclasses live in parsers.py) -------------------------------


class ParseError(NexusError):
    """Agent output failed validation.

    ``span`` is the (start, end) byte offsets of the offending region in the
    raw text, when known, for logging.
    """

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        super().__init__(message)
        self.span = span


# --- prompt templates ------------------------------------------------------


class TemplateError(NexusError):
    pass


class MissingBinding(TemplateError):
    pass


class UnknownPlaceholder(TemplateError):
    pass


class UnknownTemplate(TemplateError):
    pass


# --- pipeline / calibration / judging --------------------------------------


class PipelineError(NexusError):
    """A pipeline stage failed after any repair retry."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ValueDrift(NexusError):
    """The context agent restated a historical value incorrectly."""


class EmptyIntersection(NexusError):
    """No guideline sentence is supported by enough folds."""


class SelfJudgeViolation(NexusError):
    """Judge model matches one of the generator models."""


class DuplicateMethod(NexusError):
    pass
