"""The self-debug evaluation protocol.

Every task first gets a default generation (attempt 0). Tasks whose code did
not both execute cleanly and produce a plot form the failed frontier F_0 --
clean-but-plotless runs are unsolved too, and their repair feedback says so.
Each of up to K rounds re-prompts only the still-failed tasks with the full
accumulated dialogue: the original request, every failed reply, and a
correction turn carrying the classified error, its message, and the traceback
tail. A task that comes back fixed leaves the frontier for good; after the
last round each task's recorded final output is its fixing attempt, or its
latest failure if none succeeded.

Rounds are barriers: within one, tasks run in parallel up to the configured
worker width, but all writes funnel through the engine thread and land sorted
by task id, so the record log never depends on scheduling. Harness-side
faults (shim protocol violations) are retried once, then the task is
quarantined: reported separately, never counted against the model, and it
stops consuming repair rounds.

The system prompt, when configured, is the same for the default and repair
turns; the data preview is given once, in the original user turn, and not
repeated in correction turns.
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .codeblocks import CandidateCode, extract_code
from .errors import EmptyResponseError, InfrastructureError, ProtocolMisuseError, UsageError
from .gateway import BackendConfig, ChatDialogue, ChatMessage, backend_digest
from .prompts import load_prompt, render
from .sandbox import ExecLimits, ExecutionOutcome, ExecutionRequest, plot_produced
from .tasks import BenchTask, OutcomeRecord, RunManifest, RunStore, file_digest
from .taxonomy import ErrorClass

log = logging.getLogger(__name__)

TRACEBACK_TAIL_LINES = 120

NO_PLOT_REPORT = "The code executed without error but produced no plot file."


@dataclass
class AttemptRecord:
    """One generation/execution cycle for one task."""

    attempt_index: int
    dialogue: ChatDialogue
    candidate: CandidateCode | None
    outcome: ExecutionOutcome
    response_text: str
    fixed: bool

    @classmethod
    def build(cls, attempt_index, dialogue, candidate, outcome, response_text):
        return cls(
            attempt_index=attempt_index,
            dialogue=dialogue,
            candidate=candidate,
            outcome=outcome,
            response_text=response_text,
            fixed=plot_produced(outcome),
        )


@dataclass
class AttemptHistory:
    task_id: str
    attempts: list[AttemptRecord] = field(default_factory=list)

    def fixed_at(self) -> int | None:
        for attempt in self.attempts:
            if attempt.fixed:
                return attempt.attempt_index
        return None

    @property
    def fixed(self) -> bool:
        return self.fixed_at() is not None

    @property
    def final_index(self) -> int:
        """The fixing attempt if any attempt succeeded, else the latest one."""
        fixed_at = self.fixed_at()
        if fixed_at is not None:
            return fixed_at
        return self.attempts[-1].attempt_index


@dataclass
class ProtocolState:
    K: int
    round: int
    failed_sets: list[set[str]]  # F_0 .. F_round


@dataclass
class ProtocolResult:
    state: ProtocolState
    histories: dict[str, AttemptHistory]
    quarantined: dict[str, str]
    run_dir: Path


@dataclass
class _Quarantine:
    reason: str


def truncate_traceback(traceback: str, tail_lines: int = TRACEBACK_TAIL_LINES) -> str:
    lines = traceback.splitlines()
    if len(lines) <= tail_lines:
        return traceback
    elided = len(lines) - tail_lines
    return f"... ({elided} earlier lines elided)\n" + "\n".join(lines[-tail_lines:])


def compose_error_report(outcome: ExecutionOutcome, tail_lines: int = TRACEBACK_TAIL_LINES) -> str:
    """The feedback a failed attempt earns: class, message, traceback tail.

    A clean execution lands here only when it rendered nothing, which is
    stated outright since there is no exception to show.
    """
    if outcome.status == "success":
        return NO_PLOT_REPORT
    name = outcome.error_class.name if outcome.error_class else "Exception"
    header = f"{name}: {outcome.exception_message}" if outcome.exception_message else name
    parts = [header]
    if outcome.traceback:
        parts.append(truncate_traceback(outcome.traceback, tail_lines))
    return "\n\n".join(parts)


def build_initial_dialogue(task: BenchTask, system_prompt: str | None = None) -> ChatDialogue:
    """Single user turn: the task instruction plus the data preview."""
    messages = []
    if system_prompt:
        messages.append(ChatMessage("system", system_prompt))
    user = render(
        load_prompt("initial_user"),
        instruction=task.instruction,
        data_preview=task.data_preview,
    )
    messages.append(ChatMessage("user", user))
    return ChatDialogue(tuple(messages))


def build_repair_dialogue(
    task: BenchTask,
    history: AttemptHistory,
    system_prompt: str | None = None,
    tail_lines: int = TRACEBACK_TAIL_LINES,
) -> ChatDialogue:
    """Accumulated-feedback dialogue: the original request, then every failed
    reply followed by its correction turn."""
    if not history.attempts:
        raise ProtocolMisuseError(f"task {task.id!r} has no attempts to repair")
    if history.fixed:
        raise ProtocolMisuseError(f"task {task.id!r} is already fixed")
    messages = list(build_initial_dialogue(task, system_prompt).messages)
    repair_template = load_prompt("repair_user")
    for attempt in history.attempts:
        assistant_text = attempt.response_text or (
            attempt.candidate.source if attempt.candidate else ""
        )
        messages.append(ChatMessage("assistant", assistant_text or "(empty response)"))
        report = compose_error_report(attempt.outcome, tail_lines)
        messages.append(ChatMessage("user", render(repair_template, error_report=report)))
    return ChatDialogue(tuple(messages))


def frontier_after(histories: dict[str, AttemptHistory], round_index: int) -> set[str]:
    """F_i: tasks still unsolved after round i (works identically on resume)."""
    frontier = set()
    for task_id, history in histories.items():
        fixed_at = history.fixed_at()
        if fixed_at is None or fixed_at > round_index:
            frontier.add(task_id)
    return frontier


class SelfDebugEngine:
    """Owns one run directory and drives the protocol over it."""

    def __init__(
        self,
        backend,
        executor,
        limits: ExecLimits | None = None,
        workers: int = 1,
        system_prompt: str | None = None,
    ):
        if workers < 1:
            raise UsageError("workers must be >= 1")
        self.backend = backend
        self.executor = executor
        self.limits = limits or ExecLimits()
        self.workers = workers
        self.system_prompt = system_prompt

    # -- single attempts ---------------------------------------------------

    def initial_attempt(self, task: BenchTask, store: RunStore) -> AttemptRecord | _Quarantine:
        dialogue = build_initial_dialogue(task, self.system_prompt)
        return self._attempt(task, 0, dialogue, store)

    def repair_attempt(
        self, task: BenchTask, history: AttemptHistory, store: RunStore
    ) -> AttemptRecord | _Quarantine:
        index = len(history.attempts)
        dialogue = build_repair_dialogue(task, history, self.system_prompt)
        return self._attempt(task, index, dialogue, store)

    def _attempt(self, task, index, dialogue, store):
        """Generate, extract, execute. Returns a quarantine note instead of a
        record when execution infrastructure failed twice."""
        result = self.backend.complete(dialogue)
        try:
            candidate = extract_code(result.text)
        except EmptyResponseError:
            outcome = ExecutionOutcome(
                status="error",
                error_class=ErrorClass("EmptyResponse"),
                exception_message="model reply contained no code",
            )
            return AttemptRecord.build(index, dialogue, None, outcome, result.text)
        workdir = store.artifact_dir(task.id, index)
        last_fault = None
        for _ in range(2):
            if workdir.exists():
                shutil.rmtree(workdir)
            request = ExecutionRequest(
                code=candidate,
                workdir=workdir,
                limits=self.limits,
                image_dir=workdir / "images",
            )
            try:
                outcome = self._relativize(self.executor.run(request), store.run_dir)
                return AttemptRecord.build(index, dialogue, candidate, outcome, result.text)
            except InfrastructureError as exc:
                log.warning("infrastructure fault on %s attempt %d: %s", task.id, index, exc)
                last_fault = exc
        return _Quarantine(reason=str(last_fault))

    @staticmethod
    def _relativize(outcome: ExecutionOutcome, run_dir: Path) -> ExecutionOutcome:
        if not outcome.images:
            return outcome
        rel = tuple(
            Path(p).resolve().relative_to(Path(run_dir).resolve()).as_posix()
            for p in outcome.images
        )
        return replace(outcome, images=rel)

    # -- protocol ----------------------------------------------------------

    def run_protocol(
        self,
        tasks: list[BenchTask],
        K: int,
        run_dir,
        task_file=None,
        backend_config: BackendConfig | None = None,
    ) -> ProtocolResult:
        """Initial evaluation plus up to K repair rounds, resumable.

        ``run_dir`` is created on first use; an existing run is continued,
        refusing if the task file changed underneath it.
        """
        if K < 0:
            raise UsageError("K must be >= 0")
        run_dir = Path(run_dir)
        store = self._open_store(run_dir, K, task_file, backend_config)

        persisted = store.load()
        quarantined: dict[str, str] = dict(persisted.quarantined)
        histories: dict[str, AttemptHistory] = {}
        for task in tasks:
            records = persisted.attempt_records(task.id)
            if records:
                histories[task.id] = self._rebuild_history(task, records)

        by_id = {task.id: task for task in tasks}

        # Attempt 0 for every active task that does not have one yet.
        todo = [t for t in tasks if t.id not in histories and t.id not in quarantined]
        self._run_batch(todo, 0, histories, quarantined, store)
        failed_sets = [frontier_after(histories, 0)]

        for round_index in range(1, K + 1):
            todo = []
            for task_id in sorted(failed_sets[-1]):
                if task_id in quarantined:
                    continue
                history = histories[task_id]
                if len(history.attempts) > round_index:
                    continue  # resumed run: this round already happened
                todo.append(by_id[task_id])
            self._run_batch(todo, round_index, histories, quarantined, store)
            failed_sets.append(frontier_after(histories, round_index))
            store.update_manifest(rounds_completed=max(store.manifest.rounds_completed, round_index))

        self._finalize(histories, store)
        histories = {
            task_id: history
            for task_id, history in histories.items()
            if task_id not in quarantined
        }
        # Tasks quarantined mid-protocol leave the frontier bookkeeping
        # retroactively: they are outside model metrics altogether.
        failed_sets = [
            {task_id for task_id in bucket if task_id not in quarantined}
            for bucket in failed_sets
        ]
        state = ProtocolState(K=K, round=K, failed_sets=failed_sets)
        return ProtocolResult(
            state=state, histories=histories, quarantined=quarantined, run_dir=run_dir
        )

    def _open_store(self, run_dir, K, task_file, backend_config) -> RunStore:
        task_digest = file_digest(task_file) if task_file else ""
        config_digest = backend_digest(backend_config) if backend_config else ""
        if (run_dir / "manifest.json").exists():
            store = RunStore.open(run_dir)
            manifest = store.manifest
            if task_digest and manifest.task_file_digest and task_digest != manifest.task_file_digest:
                raise UsageError("task file changed since this run started; refusing to continue")
            if config_digest and manifest.backend_config_digest and (
                config_digest != manifest.backend_config_digest
            ):
                log.warning("backend config differs from the one recorded in the manifest")
            if K > manifest.rounds_planned:
                store.update_manifest(rounds_planned=K)
            return store
        return RunStore.create(
            run_dir,
            RunManifest(
                run_id=run_dir.name,
                task_file=str(task_file) if task_file else "",
                task_file_digest=task_digest,
                backend_config_digest=config_digest,
                rounds_planned=K,
            ),
        )

    def _run_batch(self, tasks, round_index, histories, quarantined, store) -> None:
        """Execute one round's attempts in parallel; persist sorted by task id."""
        if not tasks:
            return

        def one(task):
            if round_index == 0:
                return task.id, self.initial_attempt(task, store)
            return task.id, self.repair_attempt(task, histories[task.id], store)

        results: dict[str, AttemptRecord | _Quarantine] = {}
        if self.workers == 1 or len(tasks) <= 1:
            for task in tasks:
                task_id, attempt = one(task)
                results[task_id] = attempt
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for task_id, attempt in pool.map(one, tasks):
                    results[task_id] = attempt

        records = []
        for task_id in sorted(results):
            attempt = results[task_id]
            if isinstance(attempt, _Quarantine):
                quarantined[task_id] = attempt.reason
                store.quarantine(task_id, attempt.reason)
                histories.pop(task_id, None)
                continue
            histories.setdefault(task_id, AttemptHistory(task_id)).attempts.append(attempt)
            records.append(
                OutcomeRecord(
                    task_id=task_id,
                    attempt_index=attempt.attempt_index,
                    candidate_code=attempt.candidate.source if attempt.candidate else "",
                    outcome=attempt.outcome,
                    response_text=attempt.response_text,
                )
            )
        store.append_round(records)

    def _finalize(self, histories, store) -> None:
        for task_id in sorted(histories):
            history = histories[task_id]
            if history.attempts:
                store.mark_final(task_id, history.final_index)

    def _rebuild_history(self, task: BenchTask, records) -> AttemptHistory:
        """Reconstruct attempts (dialogues included) from persisted records."""
        history = AttemptHistory(task.id)
        for record in records:
            if record.attempt_index == 0:
                dialogue = build_initial_dialogue(task, self.system_prompt)
            else:
                dialogue = build_repair_dialogue(task, history, self.system_prompt)
            candidate = None
            if record.candidate_code:
                candidate = CandidateCode(source=record.candidate_code, origin="whole_message")
            history.attempts.append(
                AttemptRecord.build(
                    record.attempt_index,
                    dialogue,
                    candidate,
                    record.outcome,
                    record.response_text,
                )
            )
        return history
