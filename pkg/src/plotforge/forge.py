"""Dataset-construction pipeline: filter -> extract/reconstruct -> validate ->
balance -> instructions, plus the multi-turn dialogue filter.

Corpus items arrive from two kinds of sources. Educational-corpus items embed
plotting code in larger programs, so an extraction model pulls out a minimal
runnable block with inline mock data. Synthetic-corpus items store code and
the data table separately, so a runnable script is reconstructed around the
original code: a comment header showing the CSV structure, a loader stanza
that materializes and reads the table, and an appended save call when the code
never renders anything itself.

Every candidate block is runtime-validated in the sandbox; only samples that
execute cleanly AND write a real image file are kept. Library balance is
restored by keeping all non-matplotlib samples and randomly (seeded)
subsampling matplotlib down to the largest non-matplotlib library count.

The final instruction for each sample is assembled from five generated parts
around one of two fixed connective lines that name how the data is presented:
inline mock data, or a two-row preview of the table.
"""

from __future__ import annotations

import io
import json
import logging
import random
import re
import shutil
import tokenize
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .codeblocks import CandidateCode, detect_libraries, extract_code
from .errors import ForgeError, InfrastructureError
from .gateway import ChatDialogue, ChatMessage
from .libraries import PlotLibrary, primary_library
from .prompts import load_prompt, render
from .sandbox import ExecLimits, ExecutionRequest, plot_produced
from .taxonomy import ErrorClass

log = logging.getLogger(__name__)

CONNECTIVE_MOCK = "The mock data shows below:"
CONNECTIVE_PREVIEW = "The first two rows of the data are shown below:"

DEFAULT_MAX_TURNS = 10
DEFAULT_MAX_CHARS = 16_000

MOCK_DATA_MARKER = "# mock data"

# Call names that count as "this code already saves or renders its figure".
SAVE_CALL_NAMES = frozenset(
    {"savefig", "write_image", "write_html", "to_html", "write_json", "show", "save", "output_file"}
)

PROVENANCES = ("edu_corpus", "synthetic_corpus", "dialogue_corpus")


@dataclass
class CorpusItem:
    id: str
    source: str
    provenance: str
    detected_libraries: set[PlotLibrary] = field(default_factory=set)
    data_table: str | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ForgeError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusItem":
        return cls(
            id=str(raw["id"]),
            source=raw.get("source", ""),
            provenance=raw["provenance"],
            detected_libraries={PlotLibrary(n) for n in raw.get("detected_libraries", ())},
            data_table=raw.get("data_table"),
        )

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "source": self.source,
            "provenance": self.provenance,
            "detected_libraries": sorted(lib.name for lib in self.detected_libraries),
        }
        if self.data_table is not None:
            out["data_table"] = self.data_table
        return out


@dataclass
class ValidationVerdict:
    state: str  # accepted | rejected_error | rejected_no_image | rejected_timeout
    error_class: ErrorClass | None = None

    def __post_init__(self):
        if self.state == "rejected_error" and self.error_class is None:
            raise ForgeError("rejected_error verdict needs an error class")

    @property
    def accepted(self) -> bool:
        return self.state == "accepted"

    def to_dict(self) -> dict:
        out = {"state": self.state}
        if self.error_class is not None:
            out["error_class"] = self.error_class.name
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ValidationVerdict":
        error_class = raw.get("error_class")
        return cls(
            state=raw["state"],
            error_class=ErrorClass(error_class) if error_class else None,
        )


@dataclass
class InstructionParts:
    plot_description: str
    setup: str
    data_description: str
    data_block: str
    style_description: str

    def as_dict(self) -> dict:
        return {
            "plot_description": self.plot_description,
            "setup": self.setup,
            "data_description": self.data_description,
            "data_block": self.data_block,
            "style_description": self.style_description,
        }


@dataclass
class DatasetSample:
    """One pipeline unit as it flows from validation to instruction assembly."""

    id: str
    code_block: str
    provenance: str
    data_mode: str  # "mock_inline" | "preview_two_rows"
    library: str | None = None
    data_table: str | None = None
    verdict: ValidationVerdict | None = None
    image_path: str | None = None
    instruction_parts: InstructionParts | None = None
    low_confidence_data: bool = False


@dataclass
class DialogueItem:
    id: str
    turns: list[dict]

    @property
    def turn_count(self) -> int:
        return len(self.turns)

    @property
    def total_chars(self) -> int:
        return sum(len(turn.get("content", "")) for turn in self.turns)

    @classmethod
    def from_dict(cls, raw: dict) -> "DialogueItem":
        return cls(id=str(raw["id"]), turns=list(raw.get("turns", ())))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "turns": self.turns,
            "turn_count": self.turn_count,
            "total_chars": self.total_chars,
        }


# -- filtering ----------------------------------------------------------------


def filter_by_library(corpus, wanted: set[PlotLibrary], table=None):
    """Keep items whose source imports any wanted library; annotate matches."""
    for item in corpus:
        scan = detect_libraries(item.source, table=table)
        hits = scan.libraries & wanted
        if not hits:
            continue
        item.detected_libraries = scan.libraries
        yield item


# -- extraction / reconstruction ----------------------------------------------


def _is_null_reply(text: str) -> bool:
    trimmed = text.strip()
    if trimmed.startswith('"') and trimmed.endswith('"') and len(trimmed) >= 2:
        trimmed = trimmed[1:-1].strip()
    return trimmed == "null"


def extract_block(item: CorpusItem, backend) -> str | None:
    """Ask the extraction model for a standalone plotting block.

    Returns None when the model answers the literal string "null" (library
    imported but unused, or nothing extractable). A reply without a fenced
    block is an extraction failure and raises.
    """
    if item.provenance != "edu_corpus":
        raise ForgeError(f"extract_block expects edu_corpus items, got {item.provenance}")
    used = ", ".join(sorted(lib.name for lib in item.detected_libraries)) or "unknown"
    prompt = render(load_prompt("extraction"), used_libs=used, code=item.source)
    reply = backend.complete(ChatDialogue((ChatMessage("user", prompt),))).text
    if _is_null_reply(reply):
        return None
    candidate = extract_code(reply)
    if candidate.origin != "fenced":
        raise ForgeError(f"extraction reply for {item.id!r} contained no fenced code block")
    return candidate.source


def name_tokens(source: str) -> set[str]:
    """All NAME tokens outside strings/comments; degrades to a word scan."""
    try:
        return {
            tok.string
            for tok in tokenize.generate_tokens(io.StringIO(source).readline)
            if tok.type == tokenize.NAME
        }
    except (tokenize.TokenError, IndentationError, SyntaxError):
        return set(re.findall(r"[A-Za-z_]\w*", source))


def has_save_call(source: str) -> bool:
    return bool(SAVE_CALL_NAMES & name_tokens(source))


def _save_stanza(detected: set[PlotLibrary]) -> str:
    primary = primary_library(detected)
    if primary is not None and primary.name == "plotly":
        return 'fig.write_html("plot.html")\n'
    return 'import matplotlib.pyplot as _plt\n\n_plt.savefig("plot.png")\n'


def reconstruct_synthetic(item: CorpusItem) -> str:
    """Wrap separately stored code + table into one runnable script."""
    if item.provenance != "synthetic_corpus":
        raise ForgeError(f"reconstruct_synthetic expects synthetic_corpus items, got {item.provenance}")
    if not item.data_table or not item.data_table.strip():
        raise ForgeError(f"item {item.id!r} has no data table to reconstruct from")
    rows = [line for line in item.data_table.splitlines() if line.strip()]
    if len(rows) < 2:
        raise ForgeError(f"item {item.id!r} data table needs a header and at least one row")
    table_text = "\n".join(item.data_table.splitlines()).strip("\n") + "\n"
    script = [
        f"# {rows[0]}",
        f"# {rows[1]}",
        "import pandas as pd",
        "",
        f"_CSV = {table_text!r}",
        'with open("data.csv", "w") as _fh:',
        "    _fh.write(_CSV)",
        'df = pd.read_csv("data.csv")',
        "",
        item.source.rstrip("\n"),
        "",
    ]
    out = "\n".join(script)
    if not has_save_call(item.source):
        out += "\n" + _save_stanza(item.detected_libraries or detect_libraries(item.source).libraries)
    return out


# -- runtime validation ---------------------------------------------------------


def validate_sample(code: str, executor, workdir, limits: ExecLimits | None = None):
    """Execute one block; map the sandbox verdict onto acceptance states.

    Returns (verdict, image_path). Infrastructure faults retry once, then
    propagate so the stage driver can requeue/drop the item.
    """
    limits = limits or ExecLimits()
    workdir = Path(workdir)
    candidate = CandidateCode(source=code, origin="whole_message")
    last_fault = None
    for _ in range(2):
        if workdir.exists():
            shutil.rmtree(workdir)
        request = ExecutionRequest(
            code=candidate, workdir=workdir, limits=limits, image_dir=workdir / "images"
        )
        try:
            outcome = executor.run(request)
            break
        except InfrastructureError as exc:
            last_fault = exc
    else:
        raise last_fault
    if outcome.status == "timeout":
        return ValidationVerdict("rejected_timeout"), None
    if outcome.status == "error":
        return ValidationVerdict("rejected_error", error_class=outcome.error_class), None
    if plot_produced(outcome):
        return ValidationVerdict("accepted"), outcome.images[0]
    return ValidationVerdict("rejected_no_image"), None


# -- balancing ------------------------------------------------------------------


def balance_corpus(samples: list[DatasetSample], seed: int) -> list[DatasetSample]:
    """Keep all non-matplotlib samples; subsample matplotlib down to the
    largest non-matplotlib library count (uniformly, seeded)."""
    counts = Counter(s.library or "unknown" for s in samples)
    non_mpl = {lib: n for lib, n in counts.items() if lib != "matplotlib"}
    if not non_mpl:
        return list(samples)  # nothing to balance against
    target = max(non_mpl.values())
    mpl_indices = [i for i, s in enumerate(samples) if (s.library or "unknown") == "matplotlib"]
    if len(mpl_indices) <= target:
        return list(samples)
    rng = random.Random(seed)
    keep = set(rng.sample(mpl_indices, target))
    return [
        s
        for i, s in enumerate(samples)
        if (s.library or "unknown") != "matplotlib" or i in keep
    ]


# -- instruction assembly ---------------------------------------------------------


def assemble_instruction(parts: InstructionParts, mode: str) -> str:
    """Five parts around the verbatim connective line, one paragraph each."""
    for name, value in parts.as_dict().items():
        if not value or not value.strip():
            raise ForgeError(f"instruction part {name!r} is empty")
    if mode == "mock_inline":
        connective = CONNECTIVE_MOCK
    elif mode == "preview_two_rows":
        connective = CONNECTIVE_PREVIEW
    else:
        raise ForgeError(f"unknown data mode {mode!r}")
    return "\n\n".join(
        [
            parts.plot_description.strip(),
            parts.setup.strip(),
            parts.data_description.strip(),
            connective,
            parts.data_block.strip("\n"),
            parts.style_description.strip(),
        ]
    )


def parse_numbered_reply(text: str, count: int) -> dict[int, str]:
    """Split a plain-text reply into its numbered parts (1..count)."""
    parts: dict[int, list[str]] = {}
    current: int | None = None
    for line in text.splitlines():
        match = re.match(r"^\s*(\d+)[.)]\s*(.*)$", line)
        if match and 1 <= int(match.group(1)) <= count:
            current = int(match.group(1))
            parts[current] = [match.group(2)]
        elif current is not None:
            parts[current].append(line)
    missing = [str(i) for i in range(1, count + 1) if i not in parts or not "\n".join(parts[i]).strip()]
    if missing:
        raise ForgeError(f"reply is missing numbered part(s) {', '.join(missing)}")
    return {i: "\n".join(lines).strip() for i, lines in parts.items()}


def extract_mock_data_block(code: str) -> tuple[str, bool]:
    """Locate the mock-data lines in an extracted block.

    Prefers the marker comment the extraction prompt requests; without it,
    falls back to the longest contiguous run of literal assignments and
    reports low confidence.
    """
    lines = code.splitlines()
    for idx, line in enumerate(lines):
        if line.strip().lower().startswith(MOCK_DATA_MARKER):
            block = []
            for following in lines[idx + 1 :]:
                if not following.strip():
                    break
                block.append(following)
            if block:
                return "\n".join(block), True
            break
    run = _longest_assignment_run(lines)
    if run:
        return "\n".join(run), False
    raise ForgeError("no mock data lines found in code block")


_ASSIGN = re.compile(r"^\s*[A-Za-z_]\w*(\s*,\s*[A-Za-z_]\w*)*\s*=[^=]")


def _longest_assignment_run(lines: list[str]) -> list[str] | None:
    runs: list[list[str]] = []
    current: list[str] = []
    depth = 0
    for line in lines:
        opened = sum(line.count(c) for c in "([{")
        closed = sum(line.count(c) for c in ")]}")
        if current and depth > 0:
            current.append(line)
            depth += opened - closed
            continue
        if _ASSIGN.match(line):
            current.append(line)
            depth = opened - closed
        else:
            if current:
                runs.append(current)
            current = []
            depth = 0
    if current:
        runs.append(current)
    if not runs:
        return None
    return max(runs, key=len)


def build_data_preview(table: str) -> str:
    """Header plus the first two data rows, verbatim."""
    rows = [line for line in table.splitlines() if line.strip()]
    if len(rows) < 2:
        raise ForgeError("data table needs a header row and at least one data row")
    if len(rows) == 2:
        log.warning("data table has a single data row; preview is degenerate")
    return "\n".join(rows[:3])


def generate_instruction_parts(sample: DatasetSample, backend) -> InstructionParts:
    """Ask the instruction model for the numbered parts matching the sample's
    provenance; the data block itself never comes from the model."""
    if sample.verdict is None or not sample.verdict.accepted:
        raise ForgeError(f"sample {sample.id!r} is not accepted; cannot build instructions")
    if sample.provenance == "edu_corpus":
        prompt_name, count = "instruction_edu", 5
    elif sample.provenance == "synthetic_corpus":
        prompt_name, count = "instruction_synthetic", 4
    else:
        raise ForgeError(f"no instruction prompt for provenance {sample.provenance!r}")
    prompt = render(load_prompt(prompt_name), code=sample.code_block)
    images = (sample.image_path,) if sample.image_path else ()
    dialogue = ChatDialogue((ChatMessage("user", prompt, image_paths=images),))
    reply = backend.complete(dialogue).text
    numbered = parse_numbered_reply(reply, count)
    if sample.provenance == "edu_corpus":
        data_block, confident = extract_mock_data_block(sample.code_block)
        sample.low_confidence_data = not confident
        return InstructionParts(
            setup=numbered[1],
            data_description=numbered[2],
            data_block=data_block,
            plot_description=numbered[4],
            style_description=numbered[5],
        )
    if not sample.data_table:
        raise ForgeError(f"synthetic sample {sample.id!r} lacks its data table")
    return InstructionParts(
        setup=numbered[1],
        data_description=numbered[2],
        data_block=build_data_preview(sample.data_table),
        plot_description=numbered[3],
        style_description=numbered[4],
    )


# -- dialogue filtering -----------------------------------------------------------


def filter_dialogues(items, max_turns: int = DEFAULT_MAX_TURNS, max_chars: int = DEFAULT_MAX_CHARS, stats: Counter | None = None):
    """Drop dialogues with excessive turn count or total length."""
    if max_turns <= 0 or max_chars <= 0:
        raise ForgeError("dialogue limits must be positive")
    for item in items:
        if item.turn_count > max_turns:
            if stats is not None:
                stats["dropped_turns"] += 1
            continue
        if item.total_chars > max_chars:
            if stats is not None:
                stats["dropped_chars"] += 1
            continue
        if stats is not None:
            stats["kept"] += 1
        yield item


# -- JSONL plumbing ----------------------------------------------------------------


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line_num, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ForgeError(f"{path}: line {line_num}: invalid JSON - {exc}") from exc


def write_jsonl(path, rows) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count
