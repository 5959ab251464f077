"""Registry for acceptance-criterion results, rendered by the conftest hook."""

from __future__ import annotations

LINES: list[str] = []


def record(name: str, passed: bool, detail: str = "") -> str:
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] {name}"
    if detail:
        line += f" ({detail})"
    LINES.append(line)
    return line
