"""Benchmark tasks and durable run state.

A run directory is an append-only audit log: ``manifest.json`` identifies the
run (content digests of the task file and backend config, rounds bookkeeping),
``records.jsonl`` accumulates one JSON event per line, and per-attempt
artifacts live under ``artifacts/<task_id>/<attempt>/``. Three event kinds
exist: ``attempt`` (one generation/execution), ``final`` (marks which attempt
is a task's recorded final output; the last marker per task wins, so a resumed
run can re-finalize without rewriting history), and ``quarantine`` (the task
hit harness-side faults and is excluded from model metrics).

Line-delimited JSON was chosen over a database on purpose: runs stay
resumable, diffable and greppable.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .errors import (
    CorruptRunError,
    DuplicateTaskIdError,
    NotARunError,
    RecordConflictError,
    TaskFileError,
)
from .libraries import PlotLibrary, parse_library
from .sandbox import ExecutionOutcome

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"
ARTIFACTS_DIR = "artifacts"


def file_digest(path) -> str:
    """sha256 of the file bytes; stable under re-read of identical content."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def json_digest(obj) -> str:
    """sha256 of a canonical JSON encoding (sorted keys, compact)."""
    payload = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


@dataclass(frozen=True)
class BenchTask:
    """One benchmark item: what to plot, with which library, from which data."""

    id: str
    library: PlotLibrary
    instruction: str
    data_preview: str
    reference_image: str | None = None

    def __post_init__(self):
        if not self.id:
            raise TaskFileError("task id must be nonempty")
        if not self.instruction:
            raise TaskFileError(f"task {self.id!r} has an empty instruction")


def load_tasks(path) -> list[BenchTask]:
    """Read a JSONL task file, in order, rejecting duplicate ids."""
    path = Path(path)
    if not path.is_file():
        raise TaskFileError(f"task file not found: {path}")
    tasks: list[BenchTask] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TaskFileError(f"line {line_num}: invalid JSON - {exc}", line_num) from exc
            if not isinstance(raw, dict):
                raise TaskFileError(f"line {line_num}: expected a JSON object", line_num)
            try:
                task = BenchTask(
                    id=str(raw["id"]),
                    library=parse_library(str(raw["library"])),
                    instruction=str(raw["instruction"]),
                    data_preview=str(raw.get("data_preview", "")),
                    reference_image=raw.get("reference_image"),
                )
            except KeyError as exc:
                raise TaskFileError(f"line {line_num}: missing field {exc}", line_num) from exc
            if task.id in seen:
                raise DuplicateTaskIdError(task.id)
            seen.add(task.id)
            tasks.append(task)
    return tasks


@dataclass
class RunManifest:
    run_id: str
    task_file: str
    task_file_digest: str
    backend_config_digest: str
    rounds_completed: int = 0
    rounds_planned: int = 0
    created_at: str = ""

    def __post_init__(self):
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task_file": self.task_file,
            "task_file_digest": self.task_file_digest,
            "backend_config_digest": self.backend_config_digest,
            "rounds_completed": self.rounds_completed,
            "rounds_planned": self.rounds_planned,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunManifest":
        return cls(
            run_id=raw["run_id"],
            task_file=raw.get("task_file", ""),
            task_file_digest=raw["task_file_digest"],
            backend_config_digest=raw["backend_config_digest"],
            rounds_completed=int(raw.get("rounds_completed", 0)),
            rounds_planned=int(raw.get("rounds_planned", 0)),
            created_at=raw.get("created_at", ""),
        )


@dataclass(frozen=True)
class OutcomeRecord:
    """One persisted attempt: the code that ran and how it went."""

    task_id: str
    attempt_index: int
    candidate_code: str
    outcome: ExecutionOutcome
    response_text: str = ""
    is_final: bool = False

    def content_digest(self) -> str:
        # is_final excluded on purpose: finality may be revised by a resumed
        # run without that being a conflicting rewrite of history.
        return json_digest(
            {
                "task_id": self.task_id,
                "attempt_index": self.attempt_index,
                "candidate_code": self.candidate_code,
                "response_text": self.response_text,
                "outcome": self.outcome.to_dict(),
            }
        )


@dataclass
class RunState:
    """Everything a completed or in-flight run has persisted."""

    manifest: RunManifest
    records_by_task: dict[str, list[OutcomeRecord]] = field(default_factory=dict)
    quarantined: dict[str, str] = field(default_factory=dict)

    def tasks(self) -> list[str]:
        return sorted(self.records_by_task)

    def final_record(self, task_id: str) -> OutcomeRecord | None:
        for record in self.records_by_task.get(task_id, ()):
            if record.is_final:
                return record
        return None

    def attempt_records(self, task_id: str) -> list[OutcomeRecord]:
        return self.records_by_task.get(task_id, [])


def atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except Exception:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class RunStore:
    """Single writer for one run directory.

    Appends are serialized through this object; concurrent executors hand
    their results to the owner, which writes them round by round sorted by
    task id so the file bytes never depend on scheduling.
    """

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.manifest_path = self.run_dir / MANIFEST_NAME
        self.records_path = self.run_dir / RECORDS_NAME
        self._content_index: dict[tuple[str, int], str] = {}
        self.manifest: RunManifest | None = None

    @classmethod
    def create(cls, run_dir, manifest: RunManifest) -> "RunStore":
        store = cls(run_dir)
        store.run_dir.mkdir(parents=True, exist_ok=True)
        if store.manifest_path.exists():
            raise RecordConflictError(f"{store.run_dir} already holds a run")
        (store.run_dir / ARTIFACTS_DIR).mkdir(exist_ok=True)
        store.manifest = manifest
        atomic_write_text(store.manifest_path, json.dumps(manifest.to_dict(), indent=2) + "\n")
        store.records_path.touch()
        return store

    @classmethod
    def open(cls, run_dir) -> "RunStore":
        store = cls(run_dir)
        if not store.manifest_path.is_file():
            raise NotARunError(f"{store.run_dir} has no {MANIFEST_NAME}")
        store.manifest = RunManifest.from_dict(
            json.loads(store.manifest_path.read_text(encoding="utf-8"))
        )
        for event in store._read_events():
            if event["kind"] == "attempt":
                record = store._record_from_event(event)
                store._content_index[(record.task_id, record.attempt_index)] = (
                    record.content_digest()
                )
        return store

    def artifact_dir(self, task_id: str, attempt_index: int) -> Path:
        return self.run_dir / ARTIFACTS_DIR / task_id / str(attempt_index)

    def update_manifest(self, **changes) -> None:
        assert self.manifest is not None
        self.manifest = replace(self.manifest, **changes)
        atomic_write_text(self.manifest_path, json.dumps(self.manifest.to_dict(), indent=2) + "\n")

    # -- event writing ---------------------------------------------------

    def append_attempt(self, record: OutcomeRecord) -> None:
        """Durably append one attempt; identical re-appends are no-ops."""
        key = (record.task_id, record.attempt_index)
        digest = record.content_digest()
        existing = self._content_index.get(key)
        if existing is not None:
            if existing != digest:
                raise RecordConflictError(
                    f"conflicting record for task {record.task_id!r} attempt "
                    f"{record.attempt_index} with different content"
                )
            if record.is_final:
                self.mark_final(record.task_id, record.attempt_index)
            return
        events = [self._event_from_record(record)]
        if record.is_final:
            events.append(
                {"kind": "final", "task_id": record.task_id, "attempt_index": record.attempt_index}
            )
        self._append_events(events)
        self._content_index[key] = digest

    def append_round(self, records: list[OutcomeRecord]) -> None:
        """Append a whole round's attempts, sorted by task id."""
        for record in sorted(records, key=lambda r: (r.task_id, r.attempt_index)):
            self.append_attempt(record)

    def mark_final(self, task_id: str, attempt_index: int) -> None:
        if (task_id, attempt_index) not in self._content_index:
            raise RecordConflictError(
                f"cannot finalize unknown attempt ({task_id!r}, {attempt_index})"
            )
        self._append_events(
            [{"kind": "final", "task_id": task_id, "attempt_index": attempt_index}]
        )

    def quarantine(self, task_id: str, reason: str) -> None:
        self._append_events([{"kind": "quarantine", "task_id": task_id, "reason": reason}])

    def _append_events(self, events: list[dict]) -> None:
        with open(self.records_path, "a", encoding="utf-8") as fh:
            for event in events:
                fh.write(_dump_line(event))

    # -- loading ---------------------------------------------------------

    def load(self) -> RunState:
        """Rebuild the run state; validates contiguity and conflicts."""
        assert self.manifest is not None
        records: dict[str, dict[int, OutcomeRecord]] = {}
        finals: dict[str, int] = {}
        quarantined: dict[str, str] = {}
        for event in self._read_events():
            kind = event.get("kind")
            if kind == "attempt":
                record = self._record_from_event(event)
                per_task = records.setdefault(record.task_id, {})
                previous = per_task.get(record.attempt_index)
                if previous is not None and previous.content_digest() != record.content_digest():
                    raise RecordConflictError(
                        f"records.jsonl holds two different attempts for "
                        f"({record.task_id!r}, {record.attempt_index})"
                    )
                per_task[record.attempt_index] = record
            elif kind == "final":
                finals[event["task_id"]] = int(event["attempt_index"])
            elif kind == "quarantine":
                quarantined[event["task_id"]] = event.get("reason", "")
            else:
                raise CorruptRunError(f"unknown event kind {kind!r} in {RECORDS_NAME}")
        by_task: dict[str, list[OutcomeRecord]] = {}
        for task_id, per_task in records.items():
            indices = sorted(per_task)
            if indices != list(range(len(indices))):
                raise CorruptRunError(
                    f"task {task_id!r} has attempt indices {indices}, expected a "
                    f"contiguous prefix starting at 0"
                )
            final_idx = finals.get(task_id)
            by_task[task_id] = [
                replace(per_task[i], is_final=(i == final_idx)) for i in indices
            ]
        return RunState(
            manifest=self.manifest,
            records_by_task=dict(sorted(by_task.items())),
            quarantined=quarantined,
        )

    def _read_events(self):
        if not self.records_path.is_file():
            return
        with open(self.records_path, encoding="utf-8") as fh:
            for line_num, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptRunError(
                        f"{RECORDS_NAME} line {line_num}: invalid JSON - {exc}"
                    ) from exc
                yield event

    @staticmethod
    def _event_from_record(record: OutcomeRecord) -> dict:
        return {
            "kind": "attempt",
            "task_id": record.task_id,
            "attempt_index": record.attempt_index,
            "candidate_code": record.candidate_code,
            "response_text": record.response_text,
            "outcome": record.outcome.to_dict(),
        }

    @staticmethod
    def _record_from_event(event: dict) -> OutcomeRecord:
        return OutcomeRecord(
            task_id=event["task_id"],
            attempt_index=int(event["attempt_index"]),
            candidate_code=event["candidate_code"],
            response_text=event.get("response_text", ""),
            outcome=ExecutionOutcome.from_dict(event["outcome"]),
        )


def persist_record(run_dir, record: OutcomeRecord) -> None:
    """Append one record to an initialized run directory."""
    RunStore.open(run_dir).append_attempt(record)


def load_run(run_dir) -> RunState:
    """Load the manifest and every persisted record, grouped by task."""
    return RunStore.open(run_dir).load()
