"""Prompt templates, shipped as data files so wording changes never touch code.

Rendering is plain placeholder substitution (``{name}`` replaced verbatim),
not ``str.format``: substituted values are code and tracebacks, full of
braces that must never be interpreted.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    """Read a packaged template by bare name (no extension)."""
    return (
        resources.files("plotforge.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    )


def render(template: str, **fields: str) -> str:
    out = template
    for key, value in fields.items():
        out = out.replace("{" + key + "}", value)
    return out.rstrip("\n")


def default_system_prompt() -> str:
    return load_prompt("system").strip()
