from __future__ import annotations

import json
import random

import pytest

from plotforge.errors import ReportInputError
from plotforge.gateway import make_backend
from plotforge.metrics import (
    PassRate,
    exec_pass_rate,
    fixed_rate,
    incorrect_code_rate,
    per_round_table,
    round_half_up_int,
    summarize_judge_scores,
)
from plotforge.sandbox import ExecutionOutcome
from plotforge.selfdebug import SelfDebugEngine
from plotforge.tasks import OutcomeRecord, load_run
from plotforge.taxonomy import ErrorClass

from scenarios import Scenario, error, plotless, success, timeout


def _record(task_id, attempt, status="success", images=(), error_name=None, final=False):
    outcome = ExecutionOutcome(
        status=status,
        error_class=ErrorClass(error_name) if error_name else None,
        images=tuple(images),
    )
    return OutcomeRecord(
        task_id=task_id,
        attempt_index=attempt,
        candidate_code="c",
        outcome=outcome,
        is_final=final,
    )


class TestPassRateRendering:
    def test_one_decimal_rendering(self):
        assert PassRate(153, 175).render() == "87.4"

    def test_zero_and_full(self):
        assert PassRate(0, 10).render() == "0.0"
        assert PassRate(10, 10).render() == "100.0"

    def test_half_up_at_boundary(self):
        # 1/16 = 6.25% -> one-decimal half-up gives 6.3 (bankers would say 6.2)
        assert PassRate(1, 16).render() == "6.3"
        assert PassRate(3, 16).render() == "18.8"

    def test_more_rendering_examples(self):
        assert PassRate(159, 175).render() == "90.9"
        assert PassRate(160, 175).render() == "91.4"
        assert PassRate(134, 175).render() == "76.6"
        assert PassRate(152, 175).render() == "86.9"
        assert PassRate(157, 175).render() == "89.7"
        assert PassRate(158, 175).render() == "90.3"

    def test_invalid_denominator(self):
        with pytest.raises(ReportInputError):
            PassRate(1, 0)

    def test_round_half_up_int(self):
        assert round_half_up_int(76.5) == 77
        assert round_half_up_int(76.4) == 76
        assert round_half_up_int(66.666) == 67


class TestExecPassRate:
    def test_bare_execution_ignores_images(self):
        records = {"t1": [_record("t1", 0, images=())]}  # plotless success
        assert exec_pass_rate(records, 0) == PassRate(1, 1)

    def test_cutoff_excludes_later_fixes(self):
        records = {
            "t1": [
                _record("t1", 0, status="error", error_name="TypeError"),
                _record("t1", 1, images=["a.png"]),
            ]
        }
        assert exec_pass_rate(records, 0) == PassRate(0, 1)
        assert exec_pass_rate(records, 1) == PassRate(1, 1)

    def test_empty_task_set_rejected(self):
        with pytest.raises(ReportInputError):
            exec_pass_rate({}, 0)

    def test_fixed_rate_requires_plot(self):
        records = {
            "plotless": [_record("plotless", 0, images=())],
            "plotted": [_record("plotted", 0, images=["a.png"])],
        }
        assert fixed_rate(records) == PassRate(1, 2)


class TestIncorrectCodeRate:
    def test_success_with_image_not_counted(self):
        records = {"t1": [_record("t1", 0, images=["a.png"], final=True)]}
        assert incorrect_code_rate(records) == PassRate(0, 1)

    def test_plotless_success_counted(self):
        records = {"t1": [_record("t1", 0, images=(), final=True)]}
        assert incorrect_code_rate(records) == PassRate(1, 1)

    def test_errors_and_timeouts_counted(self):
        records = {
            "e": [_record("e", 0, status="error", error_name="KeyError", final=True)],
            "t": [
                _record(
                    "t",
                    0,
                    status="timeout",
                    error_name="KeyboardInterrupt",
                    final=True,
                )
            ],
        }
        assert incorrect_code_rate(records) == PassRate(2, 2)

    def test_twenty_two_of_175(self):
        records = {}
        for i in range(153):
            records[f"ok{i}"] = [_record(f"ok{i}", 0, images=["x.png"], final=True)]
        for i in range(22):
            records[f"bad{i}"] = [
                _record(f"bad{i}", 0, status="error", error_name="ValueError", final=True)
            ]
        assert incorrect_code_rate(records).render() == "12.6"

    def test_complement_identity_when_failures_are_plotless(self):
        records = {}
        for i in range(153):
            records[f"ok{i}"] = [_record(f"ok{i}", 0, images=["x.png"], final=True)]
        for i in range(22):
            records[f"bad{i}"] = [
                _record(f"bad{i}", 0, status="error", error_name="ValueError", final=True)
            ]
        exec_pct = exec_pass_rate(records, 0).percent
        incorrect_pct = incorrect_code_rate(records).percent
        assert abs(exec_pct + incorrect_pct - 100.0) <= 0.1


class TestPerRoundTable:
    def test_constant_row_when_all_fixed_at_zero(self):
        records = {
            f"t{i}": [_record(f"t{i}", 0, images=["a.png"], final=True)] for i in range(4)
        }
        table = per_round_table(records, {f"t{i}": "seaborn" for i in range(4)}, K=3)
        row = table["seaborn"]
        assert row.normal == PassRate(4, 4)
        assert all(r == PassRate(4, 4) for r in row.rounds)

    def test_monotone_within_row(self):
        records = {
            "a": [
                _record("a", 0, status="error", error_name="TypeError"),
                _record("a", 1, status="error", error_name="TypeError"),
                _record("a", 2, images=["x.png"], final=True),
            ],
            "b": [_record("b", 0, images=["x.png"], final=True)],
        }
        row = per_round_table(records, {"a": "plotly", "b": "plotly"}, K=3)["plotly"]
        percents = [row.normal.percent] + [r.percent for r in row.rounds]
        assert percents == sorted(percents)

    def test_attempts_beyond_k_rejected(self):
        records = {"a": [_record("a", 5, images=["x.png"])]}
        with pytest.raises(ReportInputError):
            per_round_table(records, {"a": "plotly"}, K=3)

    def test_randomized_rows_match_raw_log_recount(self, tmp_path):
        """Oracle: independent counting pass over the raw records.jsonl."""
        rng = random.Random(77)
        scenario = Scenario(K=3)
        for i in range(12):
            fix = rng.choice([0, 1, 2, 3, None])
            specs = []
            horizon = 4 if fix is None else fix + 1
            for attempt in range(horizon):
                if fix is not None and attempt == fix:
                    specs.append(success())
                elif rng.random() < 0.2:
                    specs.append(plotless())
                elif rng.random() < 0.2:
                    specs.append(timeout())
                else:
                    specs.append(error("ValueError"))
            scenario.add_task(f"t{i:02d}", specs, library="seaborn")
        backend = make_backend(scenario.backend_config())
        engine = SelfDebugEngine(backend, scenario.fake_executor())
        engine.run_protocol(scenario.tasks, 3, tmp_path / "run")

        state = load_run(tmp_path / "run")
        table = per_round_table(
            state.records_by_task, {t.id: t.library.name for t in scenario.tasks}, K=3
        )

        # raw recount straight off the file, no library code
        raw_success: dict[str, set[int]] = {}
        with open(tmp_path / "run" / "records.jsonl", encoding="utf-8") as fh:
            for line in fh:
                event = json.loads(line)
                if event.get("kind") != "attempt":
                    continue
                if event["outcome"]["status"] == "success":
                    raw_success.setdefault(event["task_id"], set()).add(
                        event["attempt_index"]
                    )
        n_tasks = len(scenario.tasks)
        for cutoff in range(4):
            expected = sum(
                1
                for task in scenario.tasks
                if any(a <= cutoff for a in raw_success.get(task.id, ()))
            )
            got = (
                table["seaborn"].normal
                if cutoff == 0
                else table["seaborn"].rounds[cutoff - 1]
            )
            assert got == PassRate(expected, n_tasks)


class TestJudgeScores:
    def test_mean_and_good_share(self):
        scores = {
            "a": {"vis": 80, "task": 80},
            "b": {"vis": 70, "task": 70},
            "c": {"vis": 90, "task": 90},
        }
        summary = summarize_judge_scores(scores, ["a", "b", "c"])
        assert summary.mean_vis == 80
        assert summary.mean_task == 80
        assert summary.good_vis_percent == 67  # 2 of 3
        assert summary.good_task_percent == 67

    def test_unscored_tasks_skipped(self):
        summary = summarize_judge_scores({"a": {"vis": 50, "task": 60}}, ["a", "b"])
        assert summary.scored == 1

    def test_no_scores_gives_none(self):
        assert summarize_judge_scores({}, ["a"]) is None

    def test_out_of_range_rejected(self):
        with pytest.raises(ReportInputError):
            summarize_judge_scores({"a": {"vis": 150, "task": 0}}, ["a"])
