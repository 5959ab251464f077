"""Exception hierarchy for the harness.

Every error raised on purpose derives from :class:`HarnessError`, so CLI
dispatch can map failures onto its exit-code scheme without enumerating
modules. ``InfrastructureError`` is deliberately separate from candidate-code
failures: it marks faults of the harness itself (broken shim protocol,
unreadable payloads) and must never be charged against the model under test.
"""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(HarnessError):
    """Bad invocation or configuration supplied by the caller."""


class TaskFileError(HarnessError):
    """Task or corpus file is malformed; carries the offending line number."""

    def __init__(self, message: str, line_num: int | None = None):
        super().__init__(message)
        self.line_num = line_num


class DuplicateTaskIdError(HarnessError):
    """Two tasks in one file share an id."""

    def __init__(self, task_id: str):
        super().__init__(f"duplicate task id {task_id!r}")
        self.task_id = task_id


class NotARunError(HarnessError):
    """Directory does not contain a run manifest."""


class CorruptRunError(HarnessError):
    """Persisted run state violates its invariants (gaps, bad lines)."""


class RecordConflictError(HarnessError):
    """A record for the same (task_id, attempt_index) exists with different content."""


class BackendUnavailableError(HarnessError):
    """Chat backend kept failing after the configured retries."""


class ScriptMissError(HarnessError):
    """Scripted backend or fake executor has no entry for the request (test bug)."""


class ReplayMissError(HarnessError):
    """Replay backend found no cache entry for the dialogue digest."""


class EmptyResponseError(HarnessError):
    """Model response was whitespace-only; nothing to extract."""


class ClassificationInputError(HarnessError):
    """classify() called with neither a traceback nor a reported type."""


class InfrastructureError(HarnessError):
    """Harness-side execution fault, never counted against the model."""


class ProtocolMisuseError(HarnessError):
    """Engine API called out of order (e.g. repair dialogue for a fixed task)."""


class ReportInputError(HarnessError):
    """Metrics/report inputs are inconsistent or empty."""


class ForgeError(HarnessError):
    """Dataset-pipeline stage failed for one item (reconstruction, assembly, parse)."""
