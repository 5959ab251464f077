"""Report rendering: per-library metrics in text/CSV/JSON shape, plus figures.

The JSON report is the canonical machine-readable artifact; it contains only
values derived from persisted state (no timestamps, no absolute paths), so
re-rendering a run, or rendering a byte-identical sibling run, produces
byte-identical output. CSV emitters cover the two tabular shapes (pass rates
per round, error transitions), and the figure path draws them with matplotlib
next to the delimited files.

Judge scores are ingest-only: a JSON file of externally produced per-task
vis/task scores. The harness never computes them; without the file the judge
columns render as an em-dash placeholder.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ReportInputError
from .metrics import JudgeSummary, PassRate, RoundRow, incorrect_code_rate, per_round_table, summarize_judge_scores
from .tasks import BenchTask, RunState, atomic_write_text
from .taxonomy import TransitionTable, transition_table

JUDGE_PLACEHOLDER = "—"


@dataclass
class LibraryReport:
    library: str
    task_count: int
    rounds: RoundRow
    incorrect: PassRate
    transitions: TransitionTable
    judge: JudgeSummary | None


@dataclass
class RunReport:
    rounds: int
    libraries: list[LibraryReport]
    quarantined: dict[str, str]


def load_judge_scores(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ReportInputError("judge score file must map task_id -> {vis, task}")
    return raw


def build_report(
    state: RunState,
    tasks: list[BenchTask],
    judge_scores: dict | None = None,
) -> RunReport:
    """Aggregate persisted run state into per-library sections.

    Quarantined tasks are excluded from every metric and listed separately.
    """
    library_of = {task.id: task.library.name for task in tasks}
    records_by_task = {
        task_id: records
        for task_id, records in state.records_by_task.items()
        if task_id not in state.quarantined
    }
    unknown = sorted(set(records_by_task) - set(library_of))
    if unknown:
        raise ReportInputError(f"run contains tasks missing from the task file: {unknown[:3]}")
    K = state.manifest.rounds_completed
    rows = per_round_table(records_by_task, library_of, K)

    sections = []
    for library in sorted(rows):
        per_library = {
            task_id: records
            for task_id, records in records_by_task.items()
            if library_of[task_id] == library
        }
        initial = [records[0] for records in per_library.values()]
        finals = []
        for task_id, records in per_library.items():
            final = next((r for r in records if r.is_final), None)
            if final is None:
                raise ReportInputError(f"task {task_id!r} has no final record; run incomplete?")
            finals.append(final)
        first_task = next(iter(per_library))
        library_tag = next(t.library for t in tasks if t.id == first_task)
        judge = None
        if judge_scores is not None:
            judge = summarize_judge_scores(judge_scores, sorted(per_library))
        sections.append(
            LibraryReport(
                library=library,
                task_count=len(per_library),
                rounds=rows[library],
                incorrect=incorrect_code_rate(per_library),
                transitions=transition_table(initial, finals, library_tag),
                judge=judge,
            )
        )
    return RunReport(rounds=K, libraries=sections, quarantined=dict(state.quarantined))


# -- emitters ---------------------------------------------------------------


def _rate_dict(rate: PassRate) -> dict:
    return {
        "numerator": rate.numerator,
        "denominator": rate.denominator,
        "percent": rate.render(),
    }


def report_json(report: RunReport) -> str:
    payload = {
        "rounds": report.rounds,
        "quarantined": report.quarantined,
        "libraries": {
            section.library: {
                "tasks": section.task_count,
                "exec_pass": {
                    "normal": _rate_dict(section.rounds.normal),
                    "rounds": [_rate_dict(r) for r in section.rounds.rounds],
                },
                "fixed": _rate_dict(section.rounds.fixed),
                "incorrect_code_rate": _rate_dict(section.incorrect),
                "transitions": {
                    cls.name: {"initial": initial, "final": final}
                    for cls, initial, final in section.transitions.sorted_rows()
                },
                "judge": (
                    None
                    if section.judge is None
                    else {
                        "mean_vis": section.judge.mean_vis,
                        "mean_task": section.judge.mean_task,
                        "good_vis_percent": section.judge.good_vis_percent,
                        "good_task_percent": section.judge.good_task_percent,
                        "scored": section.judge.scored,
                    }
                ),
            }
            for section in report.libraries
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def report_text(report: RunReport) -> str:
    lines: list[str] = []
    for section in report.libraries:
        lines.append(f"== {section.library} ({section.task_count} tasks) ==")
        cells = section.rounds.cells()
        head = ["normal"] + [f"round {i}" for i in range(1, len(cells))]
        lines.append(
            "exec pass:  " + "  ".join(f"{h} {c}" for h, c in zip(head, cells))
        )
        lines.append(f"fixed (valid plot): {section.rounds.fixed.render()}")
        lines.append(f"incorrect code rate: {section.incorrect.render()}")
        if section.judge is None:
            lines.append(f"judge: {JUDGE_PLACEHOLDER}")
        else:
            judge = section.judge
            lines.append(
                f"judge: vis mean {judge.mean_vis}, task mean {judge.mean_task}, "
                f"good(>=75) vis {judge.good_vis_percent}%, task {judge.good_task_percent}%"
            )
        if section.transitions.rows:
            lines.append("error transitions (initial → final):")
            for cls, initial, final in section.transitions.sorted_rows():
                lines.append(f"  {cls.name} {initial} → {final}")
        else:
            lines.append("error transitions: none")
        lines.append("")
    if report.quarantined:
        lines.append("quarantined tasks (harness faults, excluded from metrics):")
        for task_id in sorted(report.quarantined):
            lines.append(f"  {task_id}: {report.quarantined[task_id]}")
        lines.append("")
    return "\n".join(lines)


def report_pass_rates_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    rounds = report.rounds
    writer.writerow(
        ["library", "tasks", "normal"]
        + [f"round_{i}" for i in range(1, rounds + 1)]
        + ["fixed", "incorrect_code_rate"]
    )
    for section in report.libraries:
        writer.writerow(
            [section.library, section.task_count]
            + section.rounds.cells()
            + [section.rounds.fixed.render(), section.incorrect.render()]
        )
    return buf.getvalue()


def report_transitions_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["library", "error_class", "initial", "final"])
    for section in report.libraries:
        for cls, initial, final in section.transitions.sorted_rows():
            writer.writerow([section.library, cls.name, initial, final])
    return buf.getvalue()


def report_judge_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["library", "mean_vis", "mean_task", "good_vis_percent", "good_task_percent", "scored"]
    )
    for section in report.libraries:
        if section.judge is None:
            continue
        judge = section.judge
        writer.writerow(
            [
                section.library,
                judge.mean_vis,
                judge.mean_task,
                judge.good_vis_percent,
                judge.good_task_percent,
                judge.scored,
            ]
        )
    return buf.getvalue()


# -- figures ------------------------------------------------------------------


def render_figures(report: RunReport, out_dir) -> list[Path]:
    """Draw the report's two table shapes as PNGs next to the delimited output."""
    from matplotlib.figure import Figure

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.subplots()
    attempts = list(range(report.rounds + 1))
    for section in report.libraries:
        rates = [section.rounds.normal.percent] + [r.percent for r in section.rounds.rounds]
        ax.plot(attempts, rates, marker="o", label=section.library)
    ax.set_xlabel("attempt")
    ax.set_ylabel("execution pass rate (%)")
    ax.set_xticks(attempts)
    ax.set_title("Execution pass rate across repair rounds")
    ax.grid(True, alpha=0.3)
    if report.libraries:
        ax.legend()
    path = out_dir / "pass_rate_rounds.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    written.append(path)

    sections = [s for s in report.libraries if s.transitions.rows]
    if sections:
        fig = Figure(figsize=(6.4, 2.2 + 2.2 * len(sections)))
        axes = fig.subplots(len(sections), 1, squeeze=False)
        for ax, section in zip((a for row in axes for a in row), sections):
            rows = section.transitions.sorted_rows()
            names = [cls.name for cls, _, _ in rows]
            initial = [i for _, i, _ in rows]
            final = [f for _, _, f in rows]
            y = range(len(names))
            ax.barh([v + 0.2 for v in y], initial, height=0.4, label="initial")
            ax.barh([v - 0.2 for v in y], final, height=0.4, label="final")
            ax.set_yticks(list(y))
            ax.set_yticklabels(names, fontsize=8)
            ax.invert_yaxis()
            ax.set_title(f"{section.library}: error counts before/after debugging", fontsize=9)
            ax.legend(fontsize=8)
        path = out_dir / "error_transitions.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        written.append(path)
    return written


def write_report(
    report: RunReport,
    out_dir,
    fmt: str,
    figures: bool = True,
) -> tuple[Path, str]:
    """Write the report artifact(s); returns (main file, text for stdout)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        main = out_dir / "report.json"
        atomic_write_text(main, report_json(report))
    elif fmt == "csv":
        main = out_dir / "pass_rates.csv"
        atomic_write_text(main, report_pass_rates_csv(report))
        atomic_write_text(out_dir / "transitions.csv", report_transitions_csv(report))
        if any(section.judge is not None for section in report.libraries):
            atomic_write_text(out_dir / "judge.csv", report_judge_csv(report))
    elif fmt == "text":
        main = out_dir / "report.txt"
        atomic_write_text(main, report_text(report))
    else:
        raise ReportInputError(f"unknown report format {fmt!r} (want csv, json or text)")
    if figures:
        render_figures(report, out_dir)
    return main, report_text(report)
