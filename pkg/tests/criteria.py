"""Registry for acceptance-criterion results, rendered by a conftest hook so
the one-line-per-criterion report survives pytest's output capture."""

from __future__ import annotations

LINES: list[str] = []


def record(name: str, passed: bool, detail: str = "") -> str:
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}"
    if detail:
        line += f" ({detail})"
    LINES.append(line)
    return line
