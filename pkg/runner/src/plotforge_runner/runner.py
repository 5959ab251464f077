"""Execute one candidate script and emit a single structured result line.

Protocol: ``plotforge-runner --payload <file>`` where the payload is JSON
with ``code``, ``workdir``, ``image_dir`` and an informational
``timeout_hint_s``. The process exits 0 whenever the protocol was honored,
even if the candidate code failed; a nonzero exit means the shim itself could
not do its job (unreadable payload) and the supervisor classifies that as an
infrastructure fault, not a model failure.

Execution discipline:

* the first uncaught exception ends the run as ``error`` (nothing is retried
  or swallowed);
* candidate stdout/stderr go to capture files in the workdir, never to the
  result channel;
* the working directory is the image directory, so a bare
  ``savefig("plot.png")`` lands where the supervisor scans;
* matplotlib renders headlessly, ``show()`` saves instead of displaying, and
  figures still open after the run are swept to disk too, unless
  ``--no-autocapture`` is given;
* no network policy or time limit is enforced here; those belong to the
  caller.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys
import time
import traceback as traceback_module
from pathlib import Path

TRACEBACK_TAIL_LINES = 120

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".svg", ".pdf", ".html")


def _truncate_tail(text: str, tail_lines: int = TRACEBACK_TAIL_LINES) -> str:
    lines = text.splitlines()
    if len(lines) <= tail_lines:
        return text
    elided = len(lines) - tail_lines
    return f"... ({elided} earlier lines elided)\n" + "\n".join(lines[-tail_lines:])


def _candidate_traceback(exc: BaseException) -> str:
    """Format the exception with shim frames dropped from the head.

    Compile-time failures (SyntaxError) have no candidate frame at all; they
    render from the exception object alone, which still carries the
    ``<candidate>`` file context.
    """
    tb = exc.__traceback__
    while tb is not None and tb.tb_frame.f_code.co_filename != "<candidate>":
        tb = tb.tb_next
    rendered = "".join(traceback_module.format_exception(type(exc), exc, tb)).rstrip("\n")
    return _truncate_tail(rendered)


def _setup_matplotlib_hooks(image_dir: Path, autocapture: bool):
    """Force the Agg backend; make show() save into image_dir.

    Returns a callable that sweeps still-open figures to disk after the run
    (a no-op when autocapture is off or matplotlib never loaded).
    """
    os.environ.setdefault("MPLBACKEND", "Agg")
    try:
        import matplotlib

        matplotlib.use("Agg", force=True)
        import matplotlib.pyplot as plt
        from matplotlib.figure import Figure
    except Exception:
        return lambda: None
    if not autocapture:
        return lambda: None

    # Figures the candidate saved itself never need capturing; track them by
    # wrapping savefig, then sweep only the rest (shown or just left open).
    saved_ids: set[int] = set()
    original_savefig = Figure.savefig

    def _tracking_savefig(self, *args, **kwargs):
        saved_ids.add(id(self))
        return original_savefig(self, *args, **kwargs)

    Figure.savefig = _tracking_savefig
    counter = {"n": 0}

    def _capture_open_figures() -> None:
        for num in list(plt.get_fignums()):
            figure = plt.figure(num)
            if id(figure) in saved_ids or not figure.get_axes():
                continue
            counter["n"] += 1
            figure.savefig(image_dir / f"autocapture_{counter['n']:02d}.png")
            plt.close(figure)

    def _show(*args, **kwargs):
        _capture_open_figures()

    plt.show = _show
    return _capture_open_figures


def _list_images(image_dir: Path) -> list[str]:
    found = []
    for path in sorted(image_dir.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS and path.stat().st_size > 0:
            found.append(str(path.relative_to(image_dir)))
    return found


def run_payload(payload: dict, autocapture: bool = True) -> dict:
    """Run the candidate and build the result object (not yet serialized)."""
    code = payload["code"]
    workdir = Path(payload["workdir"])
    image_dir = Path(payload["image_dir"])
    workdir.mkdir(parents=True, exist_ok=True)
    image_dir.mkdir(parents=True, exist_ok=True)

    capture_figures = _setup_matplotlib_hooks(image_dir, autocapture)

    stdout_file = open(workdir / "candidate_stdout.txt", "w", encoding="utf-8")
    stderr_file = open(workdir / "candidate_stderr.txt", "w", encoding="utf-8")
    previous_cwd = os.getcwd()
    started = time.monotonic()
    failure: BaseException | None = None
    try:
        os.chdir(image_dir)
        namespace = {"__name__": "__main__", "__file__": str(workdir / "candidate.py")}
        with contextlib.redirect_stdout(stdout_file), contextlib.redirect_stderr(stderr_file):
            try:
                compiled = compile(code, "<candidate>", "exec")
                exec(compiled, namespace)
            except SystemExit as exc:
                if exc.code not in (None, 0):
                    failure = exc
            except BaseException as exc:
                failure = exc
            finally:
                try:
                    capture_figures()
                except Exception:
                    pass
    finally:
        os.chdir(previous_cwd)
        stdout_file.close()
        stderr_file.close()

    duration_ms = int((time.monotonic() - started) * 1000)
    images = _list_images(image_dir)
    if failure is None:
        return {
            "status": "ok",
            "exception_type": None,
            "exception_message": None,
            "traceback": None,
            "images": images,
            "duration_ms": duration_ms,
        }
    return {
        "status": "error",
        "exception_type": type(failure).__name__,
        "exception_message": str(failure),
        "traceback": _candidate_traceback(failure),
        "images": images,
        "duration_ms": duration_ms,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plotforge-runner", description=__doc__)
    parser.add_argument("--payload", required=True, help="JSON payload file")
    parser.add_argument(
        "--no-autocapture",
        action="store_true",
        help="do not save shown-but-unsaved figures",
    )
    args = parser.parse_args(argv)

    result_channel = sys.stdout
    try:
        with open(args.payload, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"unreadable payload: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_payload(payload, autocapture=not args.no_autocapture)
    except KeyError as exc:
        print(f"payload missing field {exc}", file=sys.stderr)
        return 2

    line = json.dumps(result, ensure_ascii=False)
    assert "\n" not in line
    print(line, file=result_channel, flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
