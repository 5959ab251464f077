from __future__ import annotations

import json

import pytest

from plotforge.errors import ReportInputError
from plotforge.gateway import make_backend
from plotforge.reporting import (
    JUDGE_PLACEHOLDER,
    build_report,
    render_figures,
    report_json,
    report_pass_rates_csv,
    report_text,
    report_transitions_csv,
    write_report,
)
from plotforge.selfdebug import SelfDebugEngine
from plotforge.tasks import load_run

from scenarios import Scenario, error, plotless, success, timeout


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    scenario = Scenario(K=3)
    scenario.add_task("m1", [success()], library="matplotlib")
    scenario.add_task("m2", [error("AttributeError"), success()], library="matplotlib")
    scenario.add_task("m3", [error("ValueError")] * 4, library="matplotlib")
    scenario.add_task("m4", [plotless()] * 4, library="matplotlib")
    scenario.add_task("s1", [error("AttributeError")] * 4, library="seaborn")
    scenario.add_task("s2", [timeout(), success()], library="seaborn")
    run_dir = tmp_path_factory.mktemp("runs") / "run"
    backend = make_backend(scenario.backend_config())
    engine = SelfDebugEngine(backend, scenario.fake_executor())
    engine.run_protocol(scenario.tasks, 3, run_dir)
    return scenario, run_dir


def _report(small_run, judge=None):
    scenario, run_dir = small_run
    return build_report(load_run(run_dir), scenario.tasks, judge_scores=judge)


class TestBuildReport:
    def test_sections_per_library(self, small_run):
        report = _report(small_run)
        assert [s.library for s in report.libraries] == ["matplotlib", "seaborn"]
        assert report.rounds == 3

    def test_pass_rates(self, small_run):
        report = _report(small_run)
        mpl = report.libraries[0]
        # m1 passes at 0, m4 is a plotless success (bare execution counts),
        # m2 recovers at round 1, m3 never
        assert mpl.rounds.normal.numerator == 2
        assert mpl.rounds.rounds[0].numerator == 3
        assert mpl.rounds.fixed.numerator == 2  # plot required: m1, m2

    def test_incorrect_code_rate_counts_plotless(self, small_run):
        report = _report(small_run)
        mpl = report.libraries[0]
        assert mpl.incorrect.numerator == 2  # m3 (error) and m4 (no plot)

    def test_transitions_include_no_plot_bucket(self, small_run):
        report = _report(small_run)
        mpl = report.libraries[0]
        names = {cls.name for cls, _, _ in mpl.transitions.sorted_rows()}
        assert "NoPlotProduced" in names
        assert "AttributeError" in names

    def test_conservation_against_frontiers(self, small_run):
        scenario, run_dir = small_run
        report = _report(small_run)
        frontiers = scenario.oracle_frontiers()
        total_initial = sum(s.transitions.initial_total() for s in report.libraries)
        total_final = sum(s.transitions.final_total() for s in report.libraries)
        assert total_initial == len(frontiers[0])
        assert total_final == len(frontiers[-1])


def test_forty_task_randomized_transition_matches_brute_force_recount(tmp_path):
    """Oracle: recount per-class buckets straight off records.jsonl."""
    import random as random_module

    rng = random_module.Random(4040)
    classes = ["TypeError", "ValueError", "KeyError", "AttributeError", "OSError"]
    scenario = Scenario(K=3)
    for i in range(40):
        fix = rng.choice([0, 1, 2, 3, None])
        horizon = 4 if fix is None else fix + 1
        specs = []
        for attempt in range(horizon):
            if fix is not None and attempt == fix:
                specs.append(success())
            elif rng.random() < 0.15:
                specs.append(plotless())
            else:
                specs.append(error(rng.choice(classes)))
        scenario.add_task(f"t{i:02d}", specs)
    backend = make_backend(scenario.backend_config())
    SelfDebugEngine(backend, scenario.fake_executor()).run_protocol(
        scenario.tasks, 3, tmp_path / "run"
    )

    initial: dict[str, int] = {}
    final: dict[str, int] = {}
    attempts: dict[str, dict[int, dict]] = {}
    finals: dict[str, int] = {}
    with open(tmp_path / "run" / "records.jsonl", encoding="utf-8") as fh:
        for line in fh:
            event = json.loads(line)
            if event["kind"] == "attempt":
                attempts.setdefault(event["task_id"], {})[event["attempt_index"]] = event["outcome"]
            elif event["kind"] == "final":
                finals[event["task_id"]] = event["attempt_index"]
    for task_id, per_attempt in attempts.items():
        for source, slot in ((per_attempt[0], initial), (per_attempt[finals[task_id]], final)):
            if source["status"] != "success":
                slot[source["error_class"]] = slot.get(source["error_class"], 0) + 1
            elif not source["images"]:
                slot["NoPlotProduced"] = slot.get("NoPlotProduced", 0) + 1

    report = build_report(load_run(tmp_path / "run"), scenario.tasks)
    table = report.libraries[0].transitions
    assert {cls.name: i for cls, i, _ in table.sorted_rows() if i} == initial
    assert {cls.name: f for cls, _, f in table.sorted_rows() if f} == final


class TestEmitters:
    def test_text_has_arrow_rows_and_judge_placeholder(self, small_run):
        text = report_text(_report(small_run))
        assert "AttributeError 1 → 0" in text  # m2 recovered
        assert f"judge: {JUDGE_PLACEHOLDER}" in text

    def test_text_with_judge_scores(self, small_run):
        judge = {
            "m1": {"vis": 80, "task": 90},
            "m2": {"vis": 70, "task": 70},
            "m3": {"vis": 90, "task": 80},
        }
        text = report_text(_report(small_run, judge))
        assert "vis mean 80" in text
        assert "good(>=75) vis 67%" in text

    def test_json_is_stable_across_renders(self, small_run):
        report = _report(small_run)
        assert report_json(report) == report_json(_report(small_run))

    def test_json_shape(self, small_run):
        payload = json.loads(report_json(_report(small_run)))
        mpl = payload["libraries"]["matplotlib"]
        assert mpl["exec_pass"]["normal"]["percent"] == "50.0"
        assert len(mpl["exec_pass"]["rounds"]) == 3
        assert mpl["judge"] is None
        assert payload["rounds"] == 3

    def test_pass_rates_csv_schema(self, small_run):
        lines = report_pass_rates_csv(_report(small_run)).splitlines()
        assert lines[0] == "library,tasks,normal,round_1,round_2,round_3,fixed,incorrect_code_rate"
        assert lines[1].startswith("matplotlib,4,")

    def test_transitions_csv_schema(self, small_run):
        lines = report_transitions_csv(_report(small_run)).splitlines()
        assert lines[0] == "library,error_class,initial,final"
        assert any(line.startswith("matplotlib,AttributeError,1,0") for line in lines)

    def test_unknown_format_rejected(self, small_run, tmp_path):
        with pytest.raises(ReportInputError):
            write_report(_report(small_run), tmp_path, "yaml")


class TestFigures:
    def test_figures_written_nonzero(self, small_run, tmp_path):
        paths = render_figures(_report(small_run), tmp_path)
        names = {p.name for p in paths}
        assert names == {"pass_rate_rounds.png", "error_transitions.png"}
        for path in paths:
            assert path.stat().st_size > 0

    def test_write_report_places_figures_alongside(self, small_run, tmp_path):
        main, _ = write_report(_report(small_run), tmp_path, "json", figures=True)
        assert main.name == "report.json"
        assert (tmp_path / "pass_rate_rounds.png").exists()

    def test_no_figures_flag(self, small_run, tmp_path):
        write_report(_report(small_run), tmp_path, "csv", figures=False)
        assert not (tmp_path / "pass_rate_rounds.png").exists()
        assert (tmp_path / "transitions.csv").exists()
