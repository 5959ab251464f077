"""Exception classification and initial -> final transition accounting.

Failures are bucketed into a closed set of exception-class names plus a
verbatim fallback for anything else. Classes group into structural errors
(shallow, well-diagnosed: wrong attribute, bad argument type, syntax) and
semantic errors (require reasoning about data shape/content). Transition
tables count, per class, how many tasks failed that way before debugging and
how many still fail that way after the last round.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import ClassificationInputError, ReportInputError

if TYPE_CHECKING:
    from .libraries import PlotLibrary
    from .tasks import OutcomeRecord

CLOSED_SET = (
    "AttributeError",
    "TypeError",
    "KeyError",
    "ValueError",
    "SyntaxError",
    "NameError",
    "IndexError",
    "ImportError",
    "ModuleNotFoundError",
    "FileNotFoundError",
    "OSError",
    "RuntimeError",
    "RecursionError",
    "NotImplementedError",
    "AssertionError",
    "AxisError",
    "UFuncTypeError",
    "Exception",
    "KeyboardInterrupt",
)

STRUCTURAL = frozenset(
    {"AttributeError", "TypeError", "SyntaxError", "NameError", "ImportError", "ModuleNotFoundError"}
)
SEMANTIC = frozenset({"KeyError", "ValueError", "IndexError"})

# Reserved label for tasks that executed cleanly but rendered nothing; they sit
# in the failed frontier, so transition totals must have a bucket for them.
NO_PLOT_LABEL = "NoPlotProduced"
# Reserved label for tracebacks whose last line yields no identifier at all.
UNPARSED_LABEL = "Unknown"

_IDENT = re.compile(r"^[A-Za-z_]\w*$")


@dataclass(frozen=True, order=True)
class ErrorClass:
    """An exception-class bucket; unknown names are carried verbatim."""

    name: str

    @property
    def is_known(self) -> bool:
        return self.name in CLOSED_SET

    def __str__(self) -> str:
        return self.name


KEYBOARD_INTERRUPT = ErrorClass("KeyboardInterrupt")
NO_PLOT = ErrorClass(NO_PLOT_LABEL)


def _strip_qualifiers(name: str) -> str:
    return name.rsplit(".", 1)[-1].strip()


def classify(traceback: str | None = None, reported_type: str | None = None) -> ErrorClass:
    """Bucket a failure, preferring the runtime-reported class name.

    The reported type (the shim's view of the outermost uncaught exception) is
    ground truth when present. Otherwise the class is the identifier before
    ":" on the last nonblank traceback line, stripped of module qualifiers --
    which also picks the outermost exception of chained tracebacks, since the
    runtime prints it last. Unrecognizable lines fall back to ``Unknown``.
    """
    if reported_type:
        return ErrorClass(_strip_qualifiers(reported_type))
    if not traceback or not traceback.strip():
        raise ClassificationInputError("need a traceback or a reported exception type")
    last = next(line for line in reversed(traceback.splitlines()) if line.strip())
    head = last.split(":", 1)[0].strip()
    name = _strip_qualifiers(head)
    if _IDENT.match(name):
        return ErrorClass(name)
    return ErrorClass(UNPARSED_LABEL)


def group_of(cls: ErrorClass) -> str:
    """Map a class to its group: ``structural``, ``semantic`` or ``other``."""
    if cls.name in STRUCTURAL:
        return "structural"
    if cls.name in SEMANTIC:
        return "semantic"
    return "other"


def failure_class(outcome) -> ErrorClass | None:
    """The transition bucket of an outcome, or None if it needs no bucket.

    Clean executions that produced at least one plot file have no bucket;
    clean executions without a plot are unsolved and get the reserved
    ``NoPlotProduced`` bucket.
    """
    if outcome.status != "success":
        if outcome.error_class is None:
            return ErrorClass(UNPARSED_LABEL)
        return outcome.error_class
    if not outcome.images:
        return NO_PLOT
    return None


@dataclass
class TransitionTable:
    """Per-class failure counts at attempt 0 vs. after the last round."""

    rows: dict[ErrorClass, tuple[int, int]]
    library: "PlotLibrary"

    def initial_total(self) -> int:
        return sum(initial for initial, _ in self.rows.values())

    def final_total(self) -> int:
        return sum(final for _, final in self.rows.values())

    def sorted_rows(self) -> list[tuple[ErrorClass, int, int]]:
        return [(cls, i, f) for cls, (i, f) in sorted(self.rows.items())]

    def render_text(self) -> str:
        lines = [f"{cls.name} {i} → {f}" for cls, i, f in self.sorted_rows()]
        return "\n".join(lines)

    def render_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["error_class", "initial", "final"])
        for cls, i, f in self.sorted_rows():
            writer.writerow([cls.name, i, f])
        return buf.getvalue()


def transition_table(
    initial: Iterable["OutcomeRecord"],
    final: Iterable["OutcomeRecord"],
    library: "PlotLibrary",
) -> TransitionTable:
    """Count per-class failures before and after debugging.

    Both record lists must cover the same task ids (all tasks of the library,
    not just failed ones); tasks fixed by debugging simply contribute to no
    final bucket.
    """
    initial = list(initial)
    final = list(final)
    initial_ids = {r.task_id for r in initial}
    final_ids = {r.task_id for r in final}
    if initial_ids != final_ids:
        extra = sorted(final_ids - initial_ids) or sorted(initial_ids - final_ids)
        raise ReportInputError(f"initial/final task sets differ, e.g. {extra[:3]}")
    rows: dict[ErrorClass, list[int]] = {}
    for records, slot in ((initial, 0), (final, 1)):
        for record in records:
            cls = failure_class(record.outcome)
            if cls is None:
                continue
            rows.setdefault(cls, [0, 0])[slot] += 1
    return TransitionTable(
        rows={cls: (i, f) for cls, (i, f) in rows.items()},
        library=library,
    )


def group_totals(table: TransitionTable) -> Mapping[str, tuple[int, int]]:
    """Aggregate a transition table into structural/semantic/other totals."""
    totals = {"structural": [0, 0], "semantic": [0, 0], "other": [0, 0]}
    for cls, (i, f) in table.rows.items():
        bucket = totals[group_of(cls)]
        bucket[0] += i
        bucket[1] += f
    return {group: (i, f) for group, (i, f) in totals.items()}
