"""Command-line entry point: the ``eval`` and ``forge`` subcommand trees.

Exit codes: 0 success, 1 usage/config error, 2 run-level failure (backend
down, corrupt run, nonempty infrastructure quarantine), 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from collections import Counter
from pathlib import Path

from . import __version__
from .config import HarnessConfig, load_config
from .errors import (
    DuplicateTaskIdError,
    ForgeError,
    HarnessError,
    NotARunError,
    TaskFileError,
    UsageError,
)
from .forge import (
    DEFAULT_MAX_CHARS,
    DEFAULT_MAX_TURNS,
    CorpusItem,
    DatasetSample,
    DialogueItem,
    ValidationVerdict,
    assemble_instruction,
    balance_corpus,
    extract_block,
    filter_by_library,
    filter_dialogues,
    generate_instruction_parts,
    read_jsonl,
    reconstruct_synthetic,
    validate_sample,
    write_jsonl,
)
from .gateway import make_backend, parse_backend_spec
from .libraries import KNOWN_LIBRARIES, parse_library, primary_library
from .prompts import default_system_prompt
from .reporting import build_report, load_judge_scores, write_report
from .sandbox import FakeExecutor, SubprocessExecutor
from .selfdebug import SelfDebugEngine
from .tasks import RunStore, load_run, load_tasks

log = logging.getLogger("plotforge")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this harness reserves 2 for run-level
    failures, so usage problems are rethrown and mapped to exit 1."""

    def error(self, message):
        raise UsageError(message)


def _common_flags(parser):
    parser.add_argument("--config", help="JSON config file (flags > env > file > defaults)")
    parser.add_argument("--seed", type=int, help="seed for randomized stages")
    parser.add_argument("--workers", type=int, help="parallel execution width")
    parser.add_argument("--timeout", type=float, help="per-execution timeout in seconds")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> _Parser:
    parser = _Parser(prog="plotforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"plotforge {__version__}")
    trees = parser.add_subparsers(dest="tree", required=True, metavar="{eval,forge}")

    ev = trees.add_parser("eval", help="benchmark a visualization-code generator")
    ev_sub = ev.add_subparsers(dest="cmd", required=True, metavar="{run,selfdebug,report}")

    run = ev_sub.add_parser("run", help="default evaluation (attempt 0)")
    run.add_argument("--tasks", required=True, help="JSONL task file")
    run.add_argument("--out", required=True, help="run directory to create")
    run.add_argument("--backend", help="http[:url] | replay:<dir> | scripted:<table.json>")
    run.add_argument("--rounds", type=int, default=0, help="repair rounds to run right away")
    run.add_argument("--fake-executor", help="scripted executor table (tests)")
    run.add_argument("--runner-cmd", help="command for the runner shim, shell-split")
    run.add_argument("--system-prompt", help="system prompt file ('' disables)")
    run.add_argument("--dry-run", action="store_true", help="print the plan, do nothing")
    _common_flags(run)
    run.set_defaults(func=cmd_eval_run)

    sd = ev_sub.add_parser("selfdebug", help="continue a run with repair rounds")
    sd.add_argument("--run", required=True, dest="run_dir", help="existing run directory")
    sd.add_argument("--rounds", type=int, help="total repair rounds K (default from config: 3)")
    sd.add_argument("--tasks", help="task file (default: the one recorded in the manifest)")
    sd.add_argument("--backend", help="backend spec (see eval run)")
    sd.add_argument("--fake-executor", help="scripted executor table (tests)")
    sd.add_argument("--runner-cmd", help="command for the runner shim, shell-split")
    sd.add_argument("--system-prompt", help="system prompt file ('' disables)")
    sd.add_argument("--dry-run", action="store_true", help="print the plan, do nothing")
    _common_flags(sd)
    sd.set_defaults(func=cmd_eval_selfdebug)

    rp = ev_sub.add_parser("report", help="render metrics for a finished run")
    rp.add_argument("--run", required=True, dest="run_dir")
    rp.add_argument("--format", required=True, choices=("csv", "json", "text"))
    rp.add_argument("--judge", help="JSON file of external judge scores")
    rp.add_argument("--tasks", help="task file (default: from the manifest)")
    rp.add_argument("--out", help="output directory (default: <run>/report)")
    rp.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    _common_flags(rp)
    rp.set_defaults(func=cmd_eval_report)

    fg = trees.add_parser("forge", help="dataset construction pipeline")
    fg_sub = fg.add_subparsers(
        dest="cmd",
        required=True,
        metavar="{filter,extract,reconstruct,validate,balance,instructions,dialogues}",
    )

    def forge_parser(name, help_text, needs_backend=False):
        sub = fg_sub.add_parser(name, help=help_text)
        sub.add_argument("--in", required=True, dest="in_path", help="input JSONL")
        sub.add_argument("--out", required=True, dest="out_path", help="output JSONL")
        if needs_backend:
            sub.add_argument("--backend", required=True, help="backend spec")
        _common_flags(sub)
        return sub

    flt = forge_parser("filter", "keep corpus items importing wanted plotting libraries")
    flt.add_argument("--libraries", nargs="*", default=list(KNOWN_LIBRARIES))
    flt.set_defaults(func=cmd_forge_filter)

    ext = forge_parser("extract", "extract standalone plotting blocks via the model", needs_backend=True)
    ext.set_defaults(func=cmd_forge_extract)

    rec = forge_parser("reconstruct", "synthesize runnable scripts from code+table items")
    rec.set_defaults(func=cmd_forge_reconstruct)

    val = forge_parser("validate", "execute blocks; keep only plot-producing ones")
    val.add_argument("--workdir", required=True, help="artifact directory for executions")
    val.add_argument("--fake-executor", help="scripted executor table (tests)")
    val.add_argument("--runner-cmd", help="command for the runner shim, shell-split")
    val.set_defaults(func=cmd_forge_validate)

    bal = forge_parser("balance", "subsample matplotlib to the largest other library")
    bal.set_defaults(func=cmd_forge_balance)

    ins = forge_parser("instructions", "generate and assemble instructions", needs_backend=True)
    ins.set_defaults(func=cmd_forge_instructions)

    dlg = forge_parser("dialogues", "drop over-long multi-turn dialogues")
    dlg.add_argument("--max-turns", type=int, help="turn-count limit (default 10)")
    dlg.add_argument("--max-chars", type=int, help="total-character limit (default 16000)")
    dlg.set_defaults(func=cmd_forge_dialogues)

    return parser


# -- shared assembly ----------------------------------------------------------


def _config_from_args(args) -> HarnessConfig:
    flag_layer: dict = {"limits": {}}
    if getattr(args, "seed", None) is not None:
        flag_layer["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        flag_layer["workers"] = args.workers
    if getattr(args, "timeout", None) is not None:
        flag_layer["limits"]["timeout_s"] = args.timeout
    if getattr(args, "rounds", None) is not None:
        flag_layer["rounds"] = args.rounds
    if getattr(args, "runner_cmd", None):
        flag_layer["runner_cmd"] = args.runner_cmd.split()
    return load_config(getattr(args, "config", None), flag_layer)


def _backend_from_args(args, config: HarnessConfig):
    spec = getattr(args, "backend", None)
    backend_config = parse_backend_spec(spec) if spec else config.backend
    if backend_config is None:
        raise UsageError("no backend configured; pass --backend or set one in the config file")
    return backend_config, make_backend(backend_config)


def _executor_from_args(args, config: HarnessConfig):
    fake = getattr(args, "fake_executor", None)
    if fake:
        return FakeExecutor.from_json(fake)
    return SubprocessExecutor(runner_cmd=config.runner_cmd)


def _system_prompt_from_args(args, config: HarnessConfig) -> str | None:
    flag = getattr(args, "system_prompt", None)
    path = flag if flag is not None else config.system_prompt_file
    if path == "":
        return None
    if path:
        return Path(path).read_text(encoding="utf-8").strip()
    return default_system_prompt()


def _print_plan(tasks, backend_config, config: HarnessConfig, rounds: int) -> None:
    print(
        f"plan: {len(tasks)} task(s), backend {backend_config.kind}, rounds {rounds}, "
        f"timeout {config.limits.timeout_s:g}s, grace {config.limits.grace_s:g}s, "
        f"workers {config.workers}"
    )


def _run_summary(result) -> int:
    total = len(result.histories)
    if total:
        fixed = sum(1 for h in result.histories.values() if h.fixed)
        print(f"tasks: {total}  fixed: {fixed}  unsolved: {total - fixed}")
        for i, frontier in enumerate(result.state.failed_sets):
            print(f"  |F_{i}| = {len(frontier)}")
    if result.quarantined:
        print(f"quarantined (infrastructure): {sorted(result.quarantined)}", file=sys.stderr)
        return 2
    return 0


# -- eval commands --------------------------------------------------------------


def cmd_eval_run(args) -> int:
    config = _config_from_args(args)
    tasks = load_tasks(args.tasks)
    backend_config, backend = _backend_from_args(args, config)
    rounds = args.rounds
    if args.dry_run:
        _print_plan(tasks, backend_config, config, rounds)
        return 0
    engine = SelfDebugEngine(
        backend,
        _executor_from_args(args, config),
        limits=config.limits,
        workers=config.workers,
        system_prompt=_system_prompt_from_args(args, config),
    )
    result = engine.run_protocol(
        tasks, rounds, args.out, task_file=args.tasks, backend_config=backend_config
    )
    return _run_summary(result)


def cmd_eval_selfdebug(args) -> int:
    config = _config_from_args(args)
    store = RunStore.open(args.run_dir)
    task_file = args.tasks or store.manifest.task_file
    if not task_file:
        raise UsageError("run manifest records no task file; pass --tasks")
    tasks = load_tasks(task_file)
    backend_config, backend = _backend_from_args(args, config)
    rounds = args.rounds if args.rounds is not None else config.rounds
    if args.dry_run:
        _print_plan(tasks, backend_config, config, rounds)
        return 0
    engine = SelfDebugEngine(
        backend,
        _executor_from_args(args, config),
        limits=config.limits,
        workers=config.workers,
        system_prompt=_system_prompt_from_args(args, config),
    )
    result = engine.run_protocol(
        tasks, rounds, args.run_dir, task_file=task_file, backend_config=backend_config
    )
    return _run_summary(result)


def cmd_eval_report(args) -> int:
    state = load_run(args.run_dir)
    task_file = args.tasks or state.manifest.task_file
    if not task_file:
        raise UsageError("run manifest records no task file; pass --tasks")
    tasks = load_tasks(task_file)
    judge = load_judge_scores(args.judge) if args.judge else None
    report = build_report(state, tasks, judge_scores=judge)
    out_dir = args.out or (Path(args.run_dir) / "report")
    main_path, text = write_report(report, out_dir, args.format, figures=not args.no_figures)
    if args.format == "text":
        print(text)
    else:
        print(main_path)
    return 0


# -- forge commands ---------------------------------------------------------------


def _print_stats(stage: str, stats: Counter) -> None:
    rendered = ", ".join(f"{key}={stats[key]}" for key in sorted(stats)) or "nothing"
    print(f"{stage}: {rendered}", file=sys.stderr)


def cmd_forge_filter(args) -> int:
    wanted = {parse_library(tag) for tag in args.libraries}
    stats = Counter()

    def items():
        for raw in read_jsonl(args.in_path):
            stats["seen"] += 1
            yield CorpusItem.from_dict(raw)

    def kept():
        for item in filter_by_library(items(), wanted):
            stats["kept"] += 1
            row = item.to_dict()
            lib = primary_library(item.detected_libraries)
            row["library"] = lib.name if lib else None
            yield row

    write_jsonl(args.out_path, kept())
    stats["dropped"] = stats["seen"] - stats["kept"]
    _print_stats("filter", stats)
    return 0


def cmd_forge_extract(args) -> int:
    config = _config_from_args(args)
    _, backend = _backend_from_args(args, config)
    stats = Counter()

    def rows():
        for raw in read_jsonl(args.in_path):
            item = CorpusItem.from_dict(raw)
            if item.provenance != "edu_corpus":
                stats["skipped_provenance"] += 1
                continue
            try:
                block = extract_block(item, backend)
            except ForgeError:
                stats["dropped_no_fence"] += 1
                continue
            if block is None:
                stats["dropped_null"] += 1
                continue
            stats["extracted"] += 1
            row = dict(raw)
            row["code_block"] = block
            yield row

    write_jsonl(args.out_path, rows())
    _print_stats("extract", stats)
    return 0


def cmd_forge_reconstruct(args) -> int:
    stats = Counter()

    def rows():
        for raw in read_jsonl(args.in_path):
            item = CorpusItem.from_dict(raw)
            if item.provenance != "synthetic_corpus":
                stats["skipped_provenance"] += 1
                continue
            try:
                block = reconstruct_synthetic(item)
            except ForgeError as exc:
                log.warning("reconstruct failed for %s: %s", item.id, exc)
                stats["dropped"] += 1
                continue
            stats["reconstructed"] += 1
            row = dict(raw)
            row["code_block"] = block
            yield row

    write_jsonl(args.out_path, rows())
    _print_stats("reconstruct", stats)
    return 0


def cmd_forge_validate(args) -> int:
    config = _config_from_args(args)
    executor = _executor_from_args(args, config)
    workroot = Path(args.workdir)
    stats = Counter()

    def rows():
        for raw in read_jsonl(args.in_path):
            code = raw.get("code_block")
            if not code:
                stats["skipped_no_code"] += 1
                continue
            item_dir = workroot / str(raw["id"])
            try:
                verdict, image = validate_sample(code, executor, item_dir, config.limits)
            except HarnessError as exc:
                log.warning("validation infrastructure fault for %s: %s", raw["id"], exc)
                stats["dropped_infrastructure"] += 1
                continue
            stats[verdict.state] += 1
            row = dict(raw)
            row["verdict"] = verdict.to_dict()
            row["image"] = (
                str(Path(image).resolve().relative_to(workroot.resolve())) if image else None
            )
            yield row

    write_jsonl(args.out_path, rows())
    _print_stats("validate", stats)
    return 0


def cmd_forge_balance(args) -> int:
    config = _config_from_args(args)
    rows = list(read_jsonl(args.in_path))
    samples = [
        DatasetSample(
            id=str(raw["id"]),
            code_block=raw.get("code_block", ""),
            provenance=raw.get("provenance", "edu_corpus"),
            data_mode="mock_inline",
            library=raw.get("library"),
        )
        for raw in rows
    ]
    kept_ids = {s.id for s in balance_corpus(samples, config.seed)}
    write_jsonl(args.out_path, (raw for raw in rows if str(raw["id"]) in kept_ids))
    stats = Counter(kept=len(kept_ids), dropped=len(rows) - len(kept_ids))
    _print_stats("balance", stats)
    return 0


def cmd_forge_instructions(args) -> int:
    config = _config_from_args(args)
    _, backend = _backend_from_args(args, config)
    stats = Counter()

    def rows():
        for raw in read_jsonl(args.in_path):
            verdict_raw = raw.get("verdict")
            if not verdict_raw or verdict_raw.get("state") != "accepted":
                stats["skipped_not_accepted"] += 1
                continue
            provenance = raw.get("provenance", "edu_corpus")
            sample = DatasetSample(
                id=str(raw["id"]),
                code_block=raw["code_block"],
                provenance=provenance,
                data_mode="mock_inline" if provenance == "edu_corpus" else "preview_two_rows",
                library=raw.get("library"),
                data_table=raw.get("data_table"),
                verdict=ValidationVerdict.from_dict(verdict_raw),
                image_path=raw.get("image"),
            )
            parts = None
            for _ in range(2):  # parse failures requeue once
                try:
                    parts = generate_instruction_parts(sample, backend)
                    break
                except ForgeError as exc:
                    last_error = exc
            if parts is None:
                log.warning("instruction generation failed for %s: %s", sample.id, last_error)
                stats["dropped_parse"] += 1
                continue
            stats["assembled"] += 1
            yield {
                "id": sample.id,
                "instruction": assemble_instruction(parts, sample.data_mode),
                "code": sample.code_block,
                "library": sample.library,
                "image": sample.image_path,
                "provenance": sample.provenance,
            }

    write_jsonl(args.out_path, rows())
    _print_stats("instructions", stats)
    return 0


def cmd_forge_dialogues(args) -> int:
    stats = Counter()
    items = (DialogueItem.from_dict(raw) for raw in read_jsonl(args.in_path))
    kept = filter_dialogues(
        items,
        max_turns=args.max_turns if args.max_turns is not None else DEFAULT_MAX_TURNS,
        max_chars=args.max_chars if args.max_chars is not None else DEFAULT_MAX_CHARS,
        stats=stats,
    )
    write_jsonl(args.out_path, (item.to_dict() for item in kept))
    _print_stats("dialogues", stats)
    return 0


# -- dispatch ---------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, TaskFileError, DuplicateTaskIdError, NotARunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HarnessError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
