"""Isolated execution of candidate plotting code, with the verdict semantics
the whole harness hangs off: a run succeeds only if it raises nothing, a hung
run is interrupted (and classified ``KeyboardInterrupt``), and "produced a
plot" means at least one nonzero-sized image file appeared under the request's
image directory.

Two executors implement the contract. ``SubprocessExecutor`` drives the real
runner shim as a child process (one payload file in, exactly one JSON result
line out). ``FakeExecutor`` is a scripted stand-in keyed on candidate source,
so every protocol test runs without spawning interpreters. Shim-protocol
violations raise :class:`InfrastructureError` and are never charged to the
model under test.
"""

from __future__ import annotations

import json
import os
import shutil
import signal
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .codeblocks import CandidateCode
from .errors import InfrastructureError, ScriptMissError, UsageError
from .taxonomy import KEYBOARD_INTERRUPT, ErrorClass, classify

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".svg", ".pdf", ".html")

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_GRACE_S = 5.0
DEFAULT_MAX_OUTPUT_BYTES = 1 << 20


@dataclass(frozen=True)
class ExecLimits:
    timeout_s: float = DEFAULT_TIMEOUT_S
    grace_s: float = DEFAULT_GRACE_S
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise UsageError("timeout_s must be > 0")
        if self.grace_s < 0:
            raise UsageError("grace_s must be >= 0")
        if self.max_output_bytes <= 0:
            raise UsageError("max_output_bytes must be > 0")


@dataclass(frozen=True)
class ExecutionRequest:
    code: CandidateCode
    workdir: Path
    limits: ExecLimits
    image_dir: Path

    def __post_init__(self):
        workdir = Path(self.workdir)
        image_dir = Path(self.image_dir)
        if workdir.exists() and any(workdir.iterdir()):
            raise UsageError(f"workdir {workdir} is not empty")
        if not image_dir.resolve().is_relative_to(workdir.resolve()):
            raise UsageError("image_dir must live inside workdir")


@dataclass(frozen=True)
class ExecutionOutcome:
    """Structured verdict of one sandboxed run.

    ``images`` only ever lists files that existed with size > 0 when the
    outcome was built, so ``plot_produced`` does not re-stat the disk.
    """

    status: str  # "success" | "error" | "timeout"
    error_class: ErrorClass | None = None
    exception_message: str | None = None
    traceback: str | None = None
    images: tuple[str, ...] = ()
    duration_ms: int = 0

    def __post_init__(self):
        if self.status not in ("success", "error", "timeout"):
            raise UsageError(f"unknown outcome status {self.status!r}")
        if self.status == "success" and self.error_class is not None:
            raise UsageError("successful outcome cannot carry an error class")
        if self.status == "timeout" and self.error_class != KEYBOARD_INTERRUPT:
            raise UsageError("timeout outcome must classify as KeyboardInterrupt")
        if self.status == "error" and self.error_class is None:
            raise UsageError("error outcome must carry an error class")
        if self.duration_ms < 0:
            raise UsageError("duration_ms must be >= 0")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "error_class": self.error_class.name if self.error_class else None,
            "exception_message": self.exception_message,
            "traceback": self.traceback,
            "images": list(self.images),
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExecutionOutcome":
        return cls(
            status=raw["status"],
            error_class=ErrorClass(raw["error_class"]) if raw.get("error_class") else None,
            exception_message=raw.get("exception_message"),
            traceback=raw.get("traceback"),
            images=tuple(raw.get("images", ())),
            duration_ms=int(raw.get("duration_ms", 0)),
        )


def plot_produced(outcome: ExecutionOutcome) -> bool:
    """The fix criterion's second half: ran clean AND rendered something."""
    return outcome.status == "success" and bool(outcome.images)


def scan_images(image_dir: Path) -> tuple[str, ...]:
    """Nonzero-sized image files under ``image_dir``, sorted, as absolute paths."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        return ()
    found = []
    for path in sorted(image_dir.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS and path.stat().st_size > 0:
            found.append(str(path.resolve()))
    return tuple(found)


def execute(request: ExecutionRequest, executor) -> ExecutionOutcome:
    """Run one candidate through the given executor.

    The workdir is preserved afterwards for audit; callers own cleanup.
    """
    return executor.run(request)


class SubprocessExecutor:
    """Drives the runner shim: spawn, enforce the timeout, parse one result line.

    On timeout the child first gets an interrupt (the "simulated keyboard
    interrupt"), then a kill after the grace window; the verdict is always
    ``timeout`` / ``KeyboardInterrupt`` regardless of what the dying shim
    managed to flush.
    """

    def __init__(self, runner_cmd=None):
        self.runner_cmd = [str(c) for c in runner_cmd] if runner_cmd else None

    def _resolve_cmd(self) -> list[str]:
        if self.runner_cmd:
            return list(self.runner_cmd)
        exe = shutil.which("plotforge-runner")
        if exe:
            return [exe]
        raise InfrastructureError(
            "runner shim not found; install the runner package, pass --runner-cmd, "
            "or use --fake-executor"
        )

    def run(self, request: ExecutionRequest) -> ExecutionOutcome:
        cmd = self._resolve_cmd()
        # the child runs with its own cwd, so every path it sees is absolute
        workdir = Path(request.workdir).resolve()
        image_dir = Path(request.image_dir).resolve()
        workdir.mkdir(parents=True, exist_ok=True)
        image_dir.mkdir(parents=True, exist_ok=True)
        payload_path = workdir / "payload.json"
        payload = {
            "code": request.code.source,
            "workdir": str(workdir),
            "image_dir": str(image_dir),
            "timeout_hint_s": request.limits.timeout_s,
        }
        payload_path.write_text(json.dumps(payload), encoding="utf-8")

        env = dict(os.environ)
        env["MPLBACKEND"] = "Agg"
        start = time.monotonic()
        proc = subprocess.Popen(
            cmd + ["--payload", str(payload_path)],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=str(workdir),
            env=env,
            text=True,
        )
        timed_out = False
        try:
            out, err = proc.communicate(timeout=request.limits.timeout_s)
        except subprocess.TimeoutExpired:
            timed_out = True
            self._interrupt(proc)
            try:
                out, err = proc.communicate(timeout=max(request.limits.grace_s, 0.1))
            except subprocess.TimeoutExpired:
                proc.kill()
                out, err = proc.communicate()
        duration_ms = int((time.monotonic() - start) * 1000)
        images = scan_images(image_dir)

        if timed_out:
            flushed = self._try_parse_line(out)
            return ExecutionOutcome(
                status="timeout",
                error_class=KEYBOARD_INTERRUPT,
                exception_message=(flushed or {}).get("exception_message")
                or f"execution exceeded {request.limits.timeout_s:g}s and was interrupted",
                traceback=(flushed or {}).get("traceback"),
                images=images,
                duration_ms=duration_ms,
            )

        if len(out or "") > request.limits.max_output_bytes:
            raise InfrastructureError("shim emitted more than max_output_bytes on stdout")
        if proc.returncode != 0:
            raise InfrastructureError(
                f"runner shim exited with {proc.returncode}: {(err or '').strip()[-500:]}"
            )
        result = self._parse_result(out)
        if result.get("status") == "ok":
            return ExecutionOutcome(status="success", images=images, duration_ms=duration_ms)
        if result.get("status") == "error":
            reported = result.get("exception_type")
            trace = result.get("traceback")
            if not reported and not trace:
                raise InfrastructureError("shim error result carries no exception information")
            return ExecutionOutcome(
                status="error",
                error_class=classify(traceback=trace, reported_type=reported),
                exception_message=result.get("exception_message"),
                traceback=trace,
                images=images,
                duration_ms=duration_ms,
            )
        raise InfrastructureError(f"shim result has unknown status {result.get('status')!r}")

    @staticmethod
    def _interrupt(proc: subprocess.Popen) -> None:
        try:
            if sys.platform == "win32":
                proc.terminate()
            else:
                proc.send_signal(signal.SIGINT)
        except OSError:
            pass

    @staticmethod
    def _try_parse_line(out: str | None) -> dict | None:
        if not out:
            return None
        for line in reversed(out.splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                parsed = json.loads(line)
            except json.JSONDecodeError:
                return None
            return parsed if isinstance(parsed, dict) else None
        return None

    @staticmethod
    def _parse_result(out: str | None) -> dict:
        lines = [line for line in (out or "").splitlines() if line.strip()]
        if len(lines) != 1:
            raise InfrastructureError(
                f"expected exactly one result line from the shim, got {len(lines)}"
            )
        try:
            result = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise InfrastructureError(f"malformed shim result line: {exc}") from exc
        if not isinstance(result, dict):
            raise InfrastructureError("shim result line is not a JSON object")
        return result


@dataclass
class OutcomeSpec:
    """One scripted verdict for the fake executor."""

    status: str  # success | error | timeout | infra
    error_class: str | None = None
    exception_message: str | None = None
    traceback: str | None = None
    images: int = 0
    duration_ms: int = 3

    @classmethod
    def from_dict(cls, raw: dict) -> "OutcomeSpec":
        return cls(
            status=raw["status"],
            error_class=raw.get("error_class"),
            exception_message=raw.get("exception_message"),
            traceback=raw.get("traceback"),
            images=int(raw.get("images", 0)),
            duration_ms=int(raw.get("duration_ms", 3)),
        )


def synthesize_traceback(error_class: str, message: str | None) -> str:
    tail = f"{error_class}: {message}" if message else error_class
    return (
        "Traceback (most recent call last):\n"
        '  File "<candidate>", line 1, in <module>\n'
        f"{tail}"
    )


class FakeExecutor:
    """Scripted executor: maps candidate source to a canned verdict.

    Success specs with ``images > 0`` really write nonzero files into the
    request's image dir, so the outcome invariant (listed files exist with
    size > 0) holds exactly as it would for a live run.
    """

    def __init__(self, default: OutcomeSpec | None = None):
        self._exact: dict[str, OutcomeSpec] = {}
        self._rules: list[tuple[str, OutcomeSpec]] = []
        self._default = default

    def script(self, code: str, spec: OutcomeSpec) -> None:
        self._exact[code] = spec

    def script_contains(self, marker: str, spec: OutcomeSpec) -> None:
        self._rules.append((marker, spec))

    @classmethod
    def from_json(cls, path) -> "FakeExecutor":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        default = OutcomeSpec.from_dict(raw["default"]) if raw.get("default") else None
        executor = cls(default=default)
        for rule in raw.get("rules", ()):
            spec = OutcomeSpec.from_dict(rule)
            if "equals" in rule:
                executor.script(rule["equals"], spec)
            elif "contains" in rule:
                executor.script_contains(rule["contains"], spec)
            else:
                raise UsageError("fake-executor rule needs an 'equals' or 'contains' key")
        return executor

    def _lookup(self, source: str) -> OutcomeSpec:
        spec = self._exact.get(source)
        if spec is not None:
            return spec
        for marker, rule_spec in self._rules:
            if marker in source:
                return rule_spec
        if self._default is not None:
            return self._default
        raise ScriptMissError(f"fake executor has no entry for candidate: {source[:80]!r}")

    def run(self, request: ExecutionRequest) -> ExecutionOutcome:
        spec = self._lookup(request.code.source)
        workdir = Path(request.workdir)
        image_dir = Path(request.image_dir)
        workdir.mkdir(parents=True, exist_ok=True)
        image_dir.mkdir(parents=True, exist_ok=True)
        if spec.status == "infra":
            raise InfrastructureError(spec.exception_message or "scripted infrastructure fault")
        if spec.status == "success":
            for k in range(spec.images):
                (image_dir / f"plot_{k}.png").write_bytes(b"\x89PNG fake image data\n")
            return ExecutionOutcome(
                status="success", images=scan_images(image_dir), duration_ms=spec.duration_ms
            )
        if spec.status == "error":
            name = spec.error_class or "Exception"
            return ExecutionOutcome(
                status="error",
                error_class=ErrorClass(name),
                exception_message=spec.exception_message,
                traceback=spec.traceback or synthesize_traceback(name, spec.exception_message),
                images=scan_images(image_dir),
                duration_ms=spec.duration_ms,
            )
        if spec.status == "timeout":
            return ExecutionOutcome(
                status="timeout",
                error_class=KEYBOARD_INTERRUPT,
                exception_message=spec.exception_message or "execution interrupted",
                traceback=spec.traceback,
                images=(),
                duration_ms=spec.duration_ms,
            )
        raise UsageError(f"unknown scripted status {spec.status!r}")
