"""Orchestrator: per-component pipeline, approval gates, persistence."""

from .control import Executors, default_program, run_to_completion
from .engine import (
    AwaitHuman,
    DecisionInput,
    Done,
    GenerationDone,
    GenerationFailed,
    LintDone,
    Materialize,
    MaterializeDone,
    RequestGeneration,
    RunLint,
    RunTests,
    TestDone,
    advance,
    apply_decision,
    build_report,
    plan_run,
)
from .model import (
    ApprovalRequest,
    Decision,
    EventRecord,
    LEGAL_TRANSITIONS,
    Phase,
    RunState,
    SYSTEM_UNIT,
    UnitState,
    WorkflowConfig,
)
from .persist import RunStore, load, persist

__all__ = [
    "ApprovalRequest",
    "AwaitHuman",
    "Decision",
    "DecisionInput",
    "Done",
    "EventRecord",
    "Executors",
    "GenerationDone",
    "GenerationFailed",
    "LEGAL_TRANSITIONS",
    "LintDone",
    "Materialize",
    "MaterializeDone",
    "Phase",
    "RequestGeneration",
    "RunLint",
    "RunState",
    "RunStore",
    "RunTests",
    "SYSTEM_UNIT",
    "TestDone",
    "UnitState",
    "WorkflowConfig",
    "advance",
    "apply_decision",
    "build_report",
    "default_program",
    "load",
    "persist",
    "plan_run",
    "run_to_completion",
]
