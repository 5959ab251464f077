from __future__ import annotations

import json

import pytest

import criteria
from plotforge.libraries import parse_library
from plotforge.tasks import BenchTask


def pytest_terminal_summary(terminalreporter):
    if criteria.LINES:
        terminalreporter.section("acceptance criteria")
        for line in criteria.LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def make_task():
    def _make(task_id="t1", library="matplotlib", instruction=None, preview="x,y\n1,2"):
        return BenchTask(
            id=task_id,
            library=parse_library(library),
            instruction=instruction or f"Draw the scenario plot for {task_id}",
            data_preview=preview,
        )

    return _make


@pytest.fixture
def write_task_file(tmp_path):
    def _write(tasks, name="tasks.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as fh:
            for task in tasks:
                fh.write(
                    json.dumps(
                        {
                            "id": task.id,
                            "library": task.library.name,
                            "instruction": task.instruction,
                            "data_preview": task.data_preview,
                        }
                    )
                    + "\n"
                )
        return path

    return _write
