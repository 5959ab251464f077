"""Candidate-code extraction from model replies and import-based library detection.

Extraction inverts the prompt convention ("return one fenced code block"):
the first nonempty triple-backtick fence wins, whatever its language tag,
because models routinely mislabel fences and append illustrative fragments
after the real answer. A reply without any fence is taken whole.

Library detection is lexical, not a full parse: corpus files are often
syntactically broken yet still worth filtering. A token-aware scan skips
string literals and comments; if tokenization itself fails, a plain
line-based scan runs instead and the result is flagged as degraded.
"""

from __future__ import annotations

import io
import re
import tokenize
from dataclasses import dataclass, field

from .errors import EmptyResponseError
from .libraries import PlotLibrary, load_signature_table

_FENCE = re.compile(r"```[ \t]*([^\n`]*)\r?\n(.*?)(?:```|\Z)", re.DOTALL)
_LINE_IMPORT = re.compile(r"^\s*(?:import|from)\s+([A-Za-z_][\w.]*)")


@dataclass(frozen=True)
class CandidateCode:
    """A program under test, plus where in the reply it came from."""

    source: str
    origin: str  # "fenced" | "whole_message"
    fence_language: str | None = None

    def __post_init__(self):
        if not self.source:
            raise EmptyResponseError("candidate code must be nonempty")


@dataclass(frozen=True)
class LibrarySignature:
    library: PlotLibrary
    patterns: tuple[str, ...]


@dataclass
class LibraryScan:
    """Detection result: the libraries seen, which patterns hit, and whether
    the scan had to fall back to line matching."""

    libraries: set[PlotLibrary] = field(default_factory=set)
    matches: dict[PlotLibrary, LibrarySignature] = field(default_factory=dict)
    degraded: bool = False


def extract_code(response: str) -> CandidateCode:
    """Pull the candidate program out of a model reply.

    First nonempty fence wins; an unterminated fence runs to the end of the
    reply. With no fence at all, the whole trimmed reply is the candidate.
    """
    if not response or not response.strip():
        raise EmptyResponseError("response is empty or whitespace-only")
    for match in _FENCE.finditer(response):
        interior = match.group(2).strip("\n").rstrip()
        if interior.strip():
            language = match.group(1).strip() or None
            return CandidateCode(source=interior, origin="fenced", fence_language=language)
    return CandidateCode(source=response.strip(), origin="whole_message")


def _imported_modules_tokenized(source: str) -> list[str]:
    """Module paths named by import statements, via the tokenizer.

    Raises on untokenizable source; the caller falls back to line scanning.
    """
    modules: list[str] = []
    tokens = list(tokenize.generate_tokens(io.StringIO(source).readline))
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.type == tokenize.NAME and tok.string in ("import", "from"):
            is_from = tok.string == "from"
            # "import a.b as c, d.e" names several modules; "from a.b import x"
            # names one. Collect dotted NAME runs until the clause ends.
            i += 1
            current: list[str] = []
            while i < len(tokens):
                nxt = tokens[i]
                if is_from and nxt.type == tokenize.NAME and nxt.string == "import":
                    i += 1  # consume so the imported names are not re-scanned
                    break
                if nxt.type == tokenize.NAME and nxt.string == "as":
                    i += 2
                    continue
                if nxt.type == tokenize.NAME:
                    current.append(nxt.string)
                    i += 1
                elif nxt.type == tokenize.OP and nxt.string == ".":
                    current.append(".")
                    i += 1
                elif nxt.type == tokenize.OP and nxt.string == ",":
                    if not is_from:
                        modules.append("".join(current))
                        current = []
                    i += 1
                else:
                    break
            if current:
                modules.append("".join(current))
        else:
            i += 1
    return [m for m in modules if m and not m.startswith(".")]


def _imported_modules_lines(source: str) -> list[str]:
    modules = []
    for line in source.splitlines():
        if line.lstrip().startswith("#"):
            continue
        match = _LINE_IMPORT.match(line)
        if match:
            modules.append(match.group(1))
    return modules


def _pattern_matches(pattern: str, module: str) -> bool:
    return module == pattern or module.startswith(pattern + ".")


def detect_libraries(source: str, table=None) -> LibraryScan:
    """Find every plotting library whose import forms appear in ``source``.

    Matches plain imports, aliased imports, and from-imports of a package root
    or known submodule. Comments and string literals never match (unless the
    scan degraded to line mode, which cannot see strings).
    """
    if table is None:
        table = load_signature_table()
    scan = LibraryScan()
    try:
        modules = _imported_modules_tokenized(source)
    except (tokenize.TokenError, IndentationError, SyntaxError):
        modules = _imported_modules_lines(source)
        scan.degraded = True
    for library, patterns in table.items():
        hit = tuple(
            p for p in patterns if any(_pattern_matches(p, module) for module in modules)
        )
        if hit:
            scan.libraries.add(library)
            scan.matches[library] = LibrarySignature(library=library, patterns=hit)
    return scan
