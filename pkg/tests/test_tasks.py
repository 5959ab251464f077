from __future__ import annotations

import json

import pytest

from plotforge.errors import (
    CorruptRunError,
    DuplicateTaskIdError,
    NotARunError,
    RecordConflictError,
    TaskFileError,
)
from plotforge.sandbox import ExecutionOutcome
from plotforge.tasks import (
    BenchTask,
    OutcomeRecord,
    RunManifest,
    RunStore,
    file_digest,
    load_run,
    load_tasks,
    persist_record,
)
from plotforge.taxonomy import ErrorClass


def _write_lines(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _task_row(task_id, library="matplotlib"):
    return {
        "id": task_id,
        "library": library,
        "instruction": f"plot {task_id}",
        "data_preview": "a,b\n1,2",
    }


class TestLoadTasks:
    def test_three_wellformed_lines_in_order(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        _write_lines(path, [_task_row("a"), _task_row("b", "seaborn"), _task_row("c")])
        tasks = load_tasks(path)
        assert [t.id for t in tasks] == ["a", "b", "c"]
        assert tasks[1].library.name == "seaborn"

    def test_duplicate_id_cites_the_id(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        _write_lines(path, [_task_row("t1"), _task_row("t1")])
        with pytest.raises(DuplicateTaskIdError, match="t1"):
            load_tasks(path)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        path.write_text(json.dumps(_task_row("ok")) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(TaskFileError, match="line 2") as err:
            load_tasks(path)
        assert err.value.line_num == 2

    def test_missing_field_names_line_number(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        _write_lines(path, [{"id": "x", "library": "matplotlib"}])
        with pytest.raises(TaskFileError, match="line 1"):
            load_tasks(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(TaskFileError):
            load_tasks(tmp_path / "absent.jsonl")

    def test_175_task_file(self, tmp_path):
        path = tmp_path / "bench.jsonl"
        _write_lines(path, [_task_row(f"task_{i:03d}") for i in range(175)])
        assert len(load_tasks(path)) == 175

    def test_unknown_library_kept_verbatim(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        _write_lines(path, [_task_row("x", "ggplot")])
        task = load_tasks(path)[0]
        assert task.library.name == "ggplot"
        assert not task.library.is_known

    def test_optional_reference_image(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        row = _task_row("x")
        row["reference_image"] = "plots/x.png"
        _write_lines(path, [row, _task_row("y")])
        tasks = load_tasks(path)
        assert tasks[0].reference_image == "plots/x.png"
        assert tasks[1].reference_image is None


def _manifest(tmp_path):
    return RunManifest(
        run_id="run1",
        task_file="tasks.jsonl",
        task_file_digest="d1",
        backend_config_digest="d2",
        rounds_planned=3,
    )


def _record(task_id, attempt, code="plot()", status="error", error="ValueError", final=False):
    outcome = ExecutionOutcome(
        status=status,
        error_class=ErrorClass(error) if status == "error" else None,
        exception_message="boom" if status == "error" else None,
        traceback="Traceback...\nValueError: boom" if status == "error" else None,
    )
    return OutcomeRecord(
        task_id=task_id,
        attempt_index=attempt,
        candidate_code=code,
        outcome=outcome,
        response_text=f"```python\n{code}\n```",
        is_final=final,
    )


class TestRunStore:
    def test_round_trip_single_record(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        record = _record("t1", 0)
        store.append_attempt(record)
        loaded = load_run(tmp_path / "run")
        assert loaded.records_by_task["t1"] == [record]

    def test_idempotent_identical_append(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0))
        store.append_attempt(_record("t1", 0))
        loaded = load_run(tmp_path / "run")
        assert len(loaded.records_by_task["t1"]) == 1

    def test_conflicting_append_rejected(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0, code="plot()"))
        with pytest.raises(RecordConflictError):
            store.append_attempt(_record("t1", 0, code="other()"))

    def test_conflict_survives_reopen(self, tmp_path):
        RunStore.create(tmp_path / "run", _manifest(tmp_path)).append_attempt(_record("t1", 0))
        reopened = RunStore.open(tmp_path / "run")
        with pytest.raises(RecordConflictError):
            reopened.append_attempt(_record("t1", 0, code="other()"))

    def test_missing_manifest_is_not_a_run(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(NotARunError):
            load_run(tmp_path / "empty")

    def test_gap_in_attempts_is_corruption(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0))
        store.append_attempt(_record("t1", 2))
        with pytest.raises(CorruptRunError, match="contiguous"):
            store.load()

    def test_fresh_run_rounds_completed_zero(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0))
        assert store.load().manifest.rounds_completed == 0

    def test_final_marker_last_wins(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0))
        store.append_attempt(_record("t1", 1))
        store.mark_final("t1", 0)
        store.mark_final("t1", 1)
        loaded = store.load()
        finals = [r.attempt_index for r in loaded.records_by_task["t1"] if r.is_final]
        assert finals == [1]

    def test_is_final_written_with_record(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.append_attempt(_record("t1", 0, status="success", final=True))
        loaded = store.load()
        assert loaded.final_record("t1").attempt_index == 0

    def test_three_round_run_round_trips_against_shadow_log(self, tmp_path):
        """Oracle: an in-memory shadow list of everything we appended."""
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        shadow: dict[str, list[OutcomeRecord]] = {}
        for task_id in ("a", "b", "c"):
            for attempt in range(4):
                final = attempt == 3
                record = _record(task_id, attempt, code=f"code_{task_id}_{attempt}", final=final)
                store.append_attempt(record)
                shadow.setdefault(task_id, []).append(record)
        store.update_manifest(rounds_completed=3)
        loaded = load_run(tmp_path / "run")
        assert loaded.manifest.rounds_completed == 3
        for task_id, records in shadow.items():
            assert loaded.records_by_task[task_id] == records

    def test_quarantine_round_trip(self, tmp_path):
        store = RunStore.create(tmp_path / "run", _manifest(tmp_path))
        store.quarantine("t9", "shim exploded")
        assert store.load().quarantined == {"t9": "shim exploded"}

    def test_persist_record_requires_initialized_run(self, tmp_path):
        with pytest.raises(NotARunError):
            persist_record(tmp_path / "nope", _record("t1", 0))

    def test_create_refuses_existing_run(self, tmp_path):
        RunStore.create(tmp_path / "run", _manifest(tmp_path))
        with pytest.raises(RecordConflictError):
            RunStore.create(tmp_path / "run", _manifest(tmp_path))


class TestDigests:
    def test_file_digest_stable_under_reread(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"stable bytes")
        assert file_digest(path) == file_digest(path)

    def test_file_digest_differs_on_content_change(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"one")
        first = file_digest(path)
        path.write_bytes(b"two")
        assert file_digest(path) != first


class TestBenchTaskInvariants:
    def test_empty_id_rejected(self):
        from plotforge.libraries import parse_library

        with pytest.raises(TaskFileError):
            BenchTask(id="", library=parse_library("matplotlib"), instruction="x", data_preview="")

    def test_empty_instruction_rejected(self):
        from plotforge.libraries import parse_library

        with pytest.raises(TaskFileError):
            BenchTask(id="t", library=parse_library("matplotlib"), instruction="", data_preview="")
