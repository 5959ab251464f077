"""Pass-rate arithmetic and the per-round table.

Execution Pass Rate is the share of tasks whose code executed without an
uncaught exception -- image presence is deliberately NOT required here (the
plot requirement belongs to the fix criterion and to the Incorrect Code
Rate). The per-round columns count a task as passing at round i if any of its
attempts up to i executed cleanly, which makes rows monotone by construction.
A stricter "fixed" share (ran clean AND produced a plot, at any attempt) is
carried alongside since the two can differ on plotless successes.

All percentages round half-up to exactly one decimal; judge-score means round
half-up to integers. Rounding goes through ``decimal`` so reports agree
bit-for-bit everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .errors import ReportInputError
from .sandbox import plot_produced
from .tasks import OutcomeRecord


def percent_one_decimal(numerator: int, denominator: int) -> Decimal:
    if denominator <= 0:
        raise ReportInputError("denominator must be positive")
    return (Decimal(100 * numerator) / Decimal(denominator)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP
    )


def round_half_up_int(value) -> int:
    return int(Decimal(str(value)).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PassRate:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.denominator <= 0:
            raise ReportInputError("pass rate needs a positive denominator")
        if not 0 <= self.numerator <= self.denominator:
            raise ReportInputError("numerator out of range")

    @property
    def percent(self) -> float:
        return float(percent_one_decimal(self.numerator, self.denominator))

    def render(self) -> str:
        """One-decimal half-up string, e.g. ``87.4``."""
        return str(percent_one_decimal(self.numerator, self.denominator))


def _executed_clean(record: OutcomeRecord) -> bool:
    return record.outcome.status == "success"


def _plotted(record: OutcomeRecord) -> bool:
    return plot_produced(record.outcome)


def exec_pass_rate(
    records_by_task: Mapping[str, Sequence[OutcomeRecord]],
    attempt_cutoff: int | None = None,
) -> PassRate:
    """Share of tasks with a clean execution at or before ``attempt_cutoff``
    (None = any attempt)."""
    if not records_by_task:
        raise ReportInputError("no tasks to rate")
    passed = 0
    for records in records_by_task.values():
        for record in records:
            if attempt_cutoff is not None and record.attempt_index > attempt_cutoff:
                continue
            if _executed_clean(record):
                passed += 1
                break
    return PassRate(passed, len(records_by_task))


def fixed_rate(records_by_task: Mapping[str, Sequence[OutcomeRecord]]) -> PassRate:
    """Share of tasks meeting the full fix criterion at any attempt."""
    if not records_by_task:
        raise ReportInputError("no tasks to rate")
    passed = sum(
        1 for records in records_by_task.values() if any(_plotted(r) for r in records)
    )
    return PassRate(passed, len(records_by_task))


def incorrect_code_rate(records_by_task: Mapping[str, Sequence[OutcomeRecord]]) -> PassRate:
    """Share of tasks whose final output produced no plot at all: execution
    errors, timeouts and plotless successes all count."""
    if not records_by_task:
        raise ReportInputError("no tasks to rate")
    incorrect = 0
    for task_id, records in records_by_task.items():
        final = next((r for r in records if r.is_final), None)
        if final is None:
            raise ReportInputError(f"task {task_id!r} has no final record")
        if not _plotted(final):
            incorrect += 1
    return PassRate(incorrect, len(records_by_task))


@dataclass
class RoundRow:
    """One library's pass-rate trajectory: normal, round 1..K, plus the
    stricter fixed share."""

    library: str
    normal: PassRate
    rounds: list[PassRate]
    fixed: PassRate

    def cells(self) -> list[str]:
        return [self.normal.render()] + [r.render() for r in self.rounds]


def per_round_table(
    records_by_task: Mapping[str, Sequence[OutcomeRecord]],
    library_of: Mapping[str, str],
    K: int,
) -> dict[str, RoundRow]:
    """Per-library rows of pass rates across rounds 0..K."""
    if K < 0:
        raise ReportInputError("K must be >= 0")
    for records in records_by_task.values():
        for record in records:
            if record.attempt_index > K:
                raise ReportInputError(
                    f"record at attempt {record.attempt_index} exceeds K={K}"
                )
    by_library: dict[str, dict[str, Sequence[OutcomeRecord]]] = {}
    for task_id, records in records_by_task.items():
        library = library_of.get(task_id)
        if library is None:
            raise ReportInputError(f"no library known for task {task_id!r}")
        by_library.setdefault(library, {})[task_id] = records
    table = {}
    for library in sorted(by_library):
        tasks = by_library[library]
        table[library] = RoundRow(
            library=library,
            normal=exec_pass_rate(tasks, attempt_cutoff=0),
            rounds=[exec_pass_rate(tasks, attempt_cutoff=i) for i in range(1, K + 1)],
            fixed=fixed_rate(tasks),
        )
    return table


@dataclass
class JudgeSummary:
    mean_vis: int
    mean_task: int
    good_vis_percent: int
    good_task_percent: int
    scored: int


def summarize_judge_scores(
    scores: Mapping[str, Mapping[str, float]], task_ids: Sequence[str]
) -> JudgeSummary | None:
    """Integer means and Good(>=75) shares over the given tasks; None when no
    task has a score."""
    vis, task = [], []
    for task_id in task_ids:
        entry = scores.get(task_id)
        if entry is None:
            continue
        v, t = float(entry["vis"]), float(entry["task"])
        for value in (v, t):
            if not 0 <= value <= 100:
                raise ReportInputError(f"judge score {value} for {task_id!r} outside [0, 100]")
        vis.append(v)
        task.append(t)
    if not vis:
        return None
    n = len(vis)
    return JudgeSummary(
        mean_vis=round_half_up_int(sum(vis) / n),
        mean_task=round_half_up_int(sum(task) / n),
        good_vis_percent=round_half_up_int(100 * sum(1 for v in vis if v >= 75) / n),
        good_task_percent=round_half_up_int(100 * sum(1 for t in task if t >= 75) / n),
        scored=n,
    )
