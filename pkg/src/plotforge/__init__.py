"""plotforge: an execution-grounded harness for visualization-code generators.

Two halves share one toolbox. The ``eval`` side benchmarks a chat model on
plotting tasks: default generation, then a self-debug loop that feeds
execution errors back for up to K repair rounds, with pass-rate and
error-transition reports. The ``forge`` side rebuilds a dataset pipeline:
filter corpora by plotting library, extract or reconstruct runnable blocks,
validate them in a sandbox, balance library counts, and assemble templated
instructions.
"""

__version__ = "0.1.0"

from .codeblocks import CandidateCode, detect_libraries, extract_code
from .gateway import BackendConfig, ChatDialogue, ChatMessage, CompletionResult, cache_key, complete, make_backend
from .libraries import PlotLibrary, parse_library
from .metrics import PassRate, exec_pass_rate, incorrect_code_rate, per_round_table
from .sandbox import (
    ExecLimits,
    ExecutionOutcome,
    ExecutionRequest,
    FakeExecutor,
    SubprocessExecutor,
    execute,
    plot_produced,
)
from .selfdebug import (
    AttemptHistory,
    AttemptRecord,
    ProtocolState,
    SelfDebugEngine,
    build_initial_dialogue,
    build_repair_dialogue,
)
from .tasks import BenchTask, OutcomeRecord, RunManifest, load_run, load_tasks, persist_record
from .taxonomy import ErrorClass, classify, group_of, transition_table

__all__ = [
    "__version__",
    "BenchTask",
    "BackendConfig",
    "CandidateCode",
    "ChatDialogue",
    "ChatMessage",
    "CompletionResult",
    "ErrorClass",
    "ExecLimits",
    "ExecutionOutcome",
    "ExecutionRequest",
    "FakeExecutor",
    "OutcomeRecord",
    "PassRate",
    "PlotLibrary",
    "ProtocolState",
    "RunManifest",
    "SelfDebugEngine",
    "SubprocessExecutor",
    "AttemptHistory",
    "AttemptRecord",
    "build_initial_dialogue",
    "build_repair_dialogue",
    "cache_key",
    "classify",
    "complete",
    "detect_libraries",
    "exec_pass_rate",
    "execute",
    "extract_code",
    "group_of",
    "incorrect_code_rate",
    "load_run",
    "load_tasks",
    "make_backend",
    "parse_library",
    "per_round_table",
    "persist_record",
    "plot_produced",
    "transition_table",
]
