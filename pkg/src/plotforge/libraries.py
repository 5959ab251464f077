"""Plotting-library vocabulary and the import-signature table.

The signature table maps each library tag to the module roots whose import
marks a source file as using that library. It ships as package data so new
libraries can be added without code changes; callers may also merge in their
own table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import UsageError

KNOWN_LIBRARIES = ("matplotlib", "seaborn", "plotly", "bokeh", "altair")

# Precedence used when a sample imports several libraries and a single tag is
# needed (corpus balancing): every non-matplotlib library outranks matplotlib.
PRIMARY_PRECEDENCE = ("seaborn", "plotly", "bokeh", "altair", "matplotlib")


@dataclass(frozen=True, order=True)
class PlotLibrary:
    """A plotting-library tag: one of the known names or a verbatim other name."""

    name: str

    def __post_init__(self):
        if not self.name:
            raise UsageError("library tag must be nonempty")

    @property
    def is_known(self) -> bool:
        return self.name in KNOWN_LIBRARIES

    def __str__(self) -> str:
        return self.name


def parse_library(tag: str) -> PlotLibrary:
    """Normalize a library tag; unknown names are kept verbatim (lowercased)."""
    tag = tag.strip().lower()
    if not tag:
        raise UsageError("library tag must be nonempty")
    return PlotLibrary(tag)


MATPLOTLIB = PlotLibrary("matplotlib")
SEABORN = PlotLibrary("seaborn")
PLOTLY = PlotLibrary("plotly")


def load_signature_table(extra_path=None) -> dict[PlotLibrary, tuple[str, ...]]:
    """Load the tag -> import-pattern table, optionally merged with a user file.

    Patterns are module paths; a pattern matches an imported module when it is
    equal to it or a dotted prefix of it.
    """
    raw = json.loads(
        resources.files("plotforge.data").joinpath("library_signatures.json").read_text("utf-8")
    )
    if extra_path is not None:
        with open(extra_path, encoding="utf-8") as fh:
            raw.update(json.load(fh))
    table = {}
    for tag, patterns in raw.items():
        if not patterns:
            raise UsageError(f"signature table entry {tag!r} has no patterns")
        table[parse_library(tag)] = tuple(patterns)
    return table


def primary_library(detected: set[PlotLibrary]) -> PlotLibrary | None:
    """Pick the single tag for a sample that imports several libraries.

    Non-matplotlib libraries win over matplotlib (seaborn scripts nearly always
    import pyplot too); ties among unknown tags resolve alphabetically.
    """
    if not detected:
        return None
    for name in PRIMARY_PRECEDENCE:
        lib = PlotLibrary(name)
        if lib in detected:
            if name != "matplotlib":
                return lib
            # matplotlib wins only when nothing else matched
            others = sorted(d for d in detected if d.name != "matplotlib")
            return others[0] if others else lib
    return sorted(detected)[0]
