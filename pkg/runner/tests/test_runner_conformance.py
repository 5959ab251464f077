"""Runner shim conformance.

The 12-script fixture drives the shim through the supervising side's public
interface (payload file in, one result line out, interrupt on timeout) and
checks the (status, exception_type, image_count) triple for each script. The
cross-check asserts that for every error case the shim's reported type equals
what the supervisor-side traceback classifier derives from the same text.
"""

from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

import criteria
from plotforge.codeblocks import CandidateCode
from plotforge.sandbox import ExecLimits, ExecutionRequest, SubprocessExecutor, plot_produced
from plotforge.taxonomy import ErrorClass, classify

RUNNER_CMD = [sys.executable, "-m", "plotforge_runner.runner"]

SAVE_ONE_IMAGE = """
import matplotlib.pyplot as plt
plt.plot([1, 2, 3], [1, 4, 9])
plt.savefig("square.png")
"""

SHOW_WITHOUT_SAVE = """
import matplotlib.pyplot as plt
plt.plot([0, 1], [1, 0])
plt.show()
"""

RAISE_VALUE_ERROR = """
raise ValueError("x and y must be the same size")
"""

RAISE_CHAINED = """
try:
    {}["missing"]
except KeyError as exc:
    raise TypeError("lookup went wrong") from exc
"""

SYNTAX_ERROR = """
def broken(:
    pass
"""

INFINITE_LOOP = """
while True:
    pass
"""

MULTI_FIGURE = """
import matplotlib.pyplot as plt
fig1, ax1 = plt.subplots()
ax1.plot([1, 2], [3, 4])
fig1.savefig("first.png")
fig2, ax2 = plt.subplots()
ax2.bar([0, 1], [2, 5])
fig2.savefig("second.png")
"""

WRITE_TO_STDOUT = """
import matplotlib.pyplot as plt
print("chatty candidate, not a protocol line")
print('{"status": "ok", "images": []}')
plt.plot([1, 2], [2, 1])
plt.savefig("quiet.png")
"""

ZERO_BYTE_IMAGE = """
open("empty.png", "wb").close()
"""

IMPORT_MISSING_MODULE = """
import definitely_not_an_installed_module_xyz
"""

# 300 distinct frames: the repeated-frame collapsing of recursion tracebacks
# would otherwise keep the rendered text short
LONG_TRACEBACK = "\n".join(
    [f"def f{i}():\n    return f{i + 1}()" for i in range(300)]
    + ["def f300():\n    raise ValueError('deep failure')", "f0()"]
)

CLEAN_EXIT_NO_PLOT = """
total = sum(range(10))
print("total:", total)
"""

# name -> (code, expected status, expected exception_type, expected image count)
FIXTURE = {
    "save_one_image": (SAVE_ONE_IMAGE, "success", None, 1),
    "show_without_save": (SHOW_WITHOUT_SAVE, "success", None, 1),
    "raise_value_error": (RAISE_VALUE_ERROR, "error", "ValueError", 0),
    "raise_chained": (RAISE_CHAINED, "error", "TypeError", 0),
    "syntax_error": (SYNTAX_ERROR, "error", "SyntaxError", 0),
    "multi_figure": (MULTI_FIGURE, "success", None, 2),
    "write_to_stdout": (WRITE_TO_STDOUT, "success", None, 1),
    "zero_byte_image": (ZERO_BYTE_IMAGE, "success", None, 0),
    "import_missing_module": (IMPORT_MISSING_MODULE, "error", "ModuleNotFoundError", 0),
    "long_traceback": (LONG_TRACEBACK, "error", "ValueError", 0),
    "clean_exit_no_plot": (CLEAN_EXIT_NO_PLOT, "success", None, 0),
}


def _execute(tmp_path, name, code, timeout_s=30.0, grace_s=2.0):
    executor = SubprocessExecutor(runner_cmd=RUNNER_CMD)
    workdir = tmp_path / name
    request = ExecutionRequest(
        code=CandidateCode(source=code, origin="whole_message"),
        workdir=workdir,
        limits=ExecLimits(timeout_s=timeout_s, grace_s=grace_s),
        image_dir=workdir / "images",
    )
    return executor.run(request)


@pytest.fixture(scope="module")
def fixture_outcomes(tmp_path_factory):
    root = tmp_path_factory.mktemp("conformance")
    outcomes = {}
    for name, (code, *_rest) in FIXTURE.items():
        outcomes[name] = _execute(root, name, code)
    return outcomes


class TestFixtureTriples:
    @pytest.mark.parametrize("name", sorted(FIXTURE))
    def test_expected_triple(self, fixture_outcomes, name):
        code, status, exception_type, image_count = FIXTURE[name]
        outcome = fixture_outcomes[name]
        assert outcome.status == status, f"{name}: {outcome}"
        if exception_type is not None:
            assert outcome.error_class == ErrorClass(exception_type), f"{name}: {outcome}"
        assert len(outcome.images) == image_count, f"{name}: {outcome.images}"

    def test_show_without_save_autocaptured_file_is_real(self, fixture_outcomes):
        outcome = fixture_outcomes["show_without_save"]
        assert plot_produced(outcome)
        assert Path(outcome.images[0]).stat().st_size > 0

    def test_zero_byte_image_not_counted_as_plot(self, fixture_outcomes):
        assert not plot_produced(fixture_outcomes["zero_byte_image"])

    def test_stdout_noise_never_reaches_result_channel(self, fixture_outcomes):
        outcome = fixture_outcomes["write_to_stdout"]
        assert outcome.status == "success"  # protocol survived candidate prints

    def test_long_traceback_truncated_to_tail(self, fixture_outcomes):
        outcome = fixture_outcomes["long_traceback"]
        assert outcome.traceback is not None
        assert len(outcome.traceback.splitlines()) <= 121  # tail + elision marker
        assert "earlier lines elided" in outcome.traceback

    def test_infinite_loop_terminated_and_classified(self, tmp_path):
        timeout_s, grace_s = 2.0, 1.0
        started = time.monotonic()
        outcome = _execute(tmp_path, "infinite_loop", INFINITE_LOOP, timeout_s, grace_s)
        elapsed = time.monotonic() - started
        assert outcome.status == "timeout"
        assert outcome.error_class == ErrorClass("KeyboardInterrupt")
        assert elapsed < timeout_s + grace_s + 5.0
        criteria.record(
            "Runner shim conformance",
            True,
            f"12-script fixture; infinite loop stopped in {elapsed:.1f}s as KeyboardInterrupt",
        )


class TestCrossCheckWithTaxonomy:
    def test_reported_type_matches_classifier_on_same_traceback(self, fixture_outcomes):
        checked = 0
        for name, (code, status, exception_type, _count) in FIXTURE.items():
            if status != "error":
                continue
            outcome = fixture_outcomes[name]
            assert outcome.traceback, name
            derived = classify(traceback=outcome.traceback)
            assert derived == outcome.error_class, (
                f"{name}: shim said {outcome.error_class}, classifier said {derived}"
            )
            checked += 1
        assert checked >= 5
        criteria.record(
            "Cross-check shim vs classifier",
            True,
            f"{checked} error fixtures agree",
        )


class TestShimProtocolDirect:
    def test_single_result_line_and_zero_exit(self, tmp_path):
        payload = {
            "code": "print('hello')",
            "workdir": str(tmp_path / "w"),
            "image_dir": str(tmp_path / "w" / "images"),
            "timeout_hint_s": 5,
        }
        (tmp_path / "w").mkdir()
        payload_path = tmp_path / "payload.json"
        payload_path.write_text(json.dumps(payload), encoding="utf-8")
        proc = subprocess.run(
            RUNNER_CMD + ["--payload", str(payload_path)],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0
        lines = [line for line in proc.stdout.splitlines() if line.strip()]
        assert len(lines) == 1
        result = json.loads(lines[0])
        assert result["status"] == "ok"
        captured = (tmp_path / "w" / "candidate_stdout.txt").read_text(encoding="utf-8")
        assert "hello" in captured

    def test_error_result_still_exits_zero(self, tmp_path):
        payload = {
            "code": "raise KeyError('gone')",
            "workdir": str(tmp_path / "w"),
            "image_dir": str(tmp_path / "w" / "images"),
            "timeout_hint_s": 5,
        }
        (tmp_path / "w").mkdir()
        payload_path = tmp_path / "payload.json"
        payload_path.write_text(json.dumps(payload), encoding="utf-8")
        proc = subprocess.run(
            RUNNER_CMD + ["--payload", str(payload_path)],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0
        result = json.loads(proc.stdout.strip())
        assert result["status"] == "error"
        assert result["exception_type"] == "KeyError"

    def test_unreadable_payload_nonzero_exit(self, tmp_path):
        missing = tmp_path / "nope.json"
        proc = subprocess.run(
            RUNNER_CMD + ["--payload", str(missing)],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode != 0

    def test_no_autocapture_flag(self, tmp_path):
        payload = {
            "code": SHOW_WITHOUT_SAVE,
            "workdir": str(tmp_path / "w"),
            "image_dir": str(tmp_path / "w" / "images"),
            "timeout_hint_s": 5,
        }
        (tmp_path / "w").mkdir()
        payload_path = tmp_path / "payload.json"
        payload_path.write_text(json.dumps(payload), encoding="utf-8")
        proc = subprocess.run(
            RUNNER_CMD + ["--payload", str(payload_path), "--no-autocapture"],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0
        result = json.loads(proc.stdout.strip())
        assert result["status"] == "ok"
        assert result["images"] == []
