"""The orchestrator state machine.

``advance`` is a pure transition function: it consumes completed-work
inputs (generation results, lint and test reports, approval decisions),
applies the phase-legality table, and emits the next actions. The control
loop in :func:`run_to_completion` executes those actions against the
configured executors and persists the state after every transition, which
is what makes a killed run resumable from its run directory.
"""

from __future__ import annotations

import copy
import difflib
import json
from dataclasses import dataclass

from ..blueprint import (
    Blueprint,
    consistency_check,
    dependency_order,
    emit_blueprint,
    find_top,
)
from ..errors import (
    IllegalTransitionError,
    PlanError,
    StaleRequestError,
    UnknownRequestError,
)
from ..genbackend import GenerationResult, GenerationTask, TaskKind, accumulate_usage, build_prompt
from ..toolrunners import LintReport, TestReport
from .model import (
    ApprovalRequest,
    Decision,
    EventRecord,
    Phase,
    RunState,
    SYSTEM_UNIT,
    UnitState,
    WorkflowConfig,
)

ACTIVE_PHASES = (Phase.GENERATING, Phase.LINTING, Phase.TESTING, Phase.APPLYING_FIX)


# --- actions the control loop executes -----------------------------------------

@dataclass(frozen=True)
class RequestGeneration:
    unit: str
    task: GenerationTask


@dataclass(frozen=True)
class Materialize:
    unit: str
    files: tuple[tuple[str, str], ...]
    origin: str  # "generation" | "fix" | "edit"
    request_id: str | None = None


@dataclass(frozen=True)
class RunLint:
    unit: str


@dataclass(frozen=True)
class RunTests:
    unit: str


@dataclass(frozen=True)
class AwaitHuman:
    request: ApprovalRequest


@dataclass(frozen=True)
class Done:
    result: str


# --- inputs advance() consumes --------------------------------------------------

@dataclass(frozen=True)
class GenerationDone:
    unit: str
    task_kind: TaskKind
    result: GenerationResult


@dataclass(frozen=True)
class GenerationFailed:
    unit: str
    task_kind: TaskKind
    message: str


@dataclass(frozen=True)
class MaterializeDone:
    unit: str
    origin: str
    paths: tuple[str, ...]
    request_id: str | None = None


@dataclass(frozen=True)
class LintDone:
    unit: str
    report: LintReport


@dataclass(frozen=True)
class TestDone:
    unit: str
    report: TestReport
    detail: dict | None = None  # e.g. the sysverify divergence report


@dataclass(frozen=True)
class DecisionInput:
    decision: Decision


# --- planning -------------------------------------------------------------------

def plan_run(bp: Blueprint, config: WorkflowConfig | None = None,
             run_id: str | None = None) -> RunState:
    """Build the initial run state from a consistency-clean blueprint.

    The plan is the dependency order with the top-level component deferred
    to the integration phase; system verification is a further synthetic
    unit that unlocks once integration is verified.
    """
    config = config or WorkflowConfig()
    diags = consistency_check(bp)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise PlanError(errors)

    order = dependency_order(bp)
    units: dict[str, UnitState] = {}
    integration_name = None
    if bp.components:
        integration_name = find_top(bp)[0]
        plan = [n for n in order if n != integration_name]
        for name in plan:
            units[name] = UnitState(name=name, kind="component")
        units[integration_name] = UnitState(name=integration_name, kind="integration")
        units[SYSTEM_UNIT] = UnitState(name=SYSTEM_UNIT, kind="system")
    else:
        plan = []

    if run_id is None:
        import uuid

        run_id = uuid.uuid4().hex[:12]
    state = RunState(
        run_id=run_id,
        blueprint=bp,
        plan=plan,
        units=units,
        integration_name=integration_name,
        config=config,
    )
    state.append_event(
        "generated",
        {"origin": "run_created", "run_id": run_id, "project": bp.project_name, "plan": plan},
    )
    return state


# --- task construction -----------------------------------------------------------

def _component_dict(bp: Blueprint, name: str) -> dict:
    doc = json.loads(emit_blueprint(bp))
    for entry in doc["components"]:
        if entry["name"] == name:
            return entry
    raise KeyError(name)


def _base_context(state: RunState, unit: UnitState) -> dict:
    name = state.integration_name if unit.kind == "system" else unit.name
    return {
        "project": state.blueprint.project_name,
        "parameters": dict(state.blueprint.parameters),
        "component": _component_dict(state.blueprint, name),
    }


def _generation_kinds(unit: UnitState) -> list[TaskKind]:
    if unit.kind == "component":
        return [TaskKind.COMPONENT_HDL, TaskKind.COMPONENT_TESTBENCH]
    if unit.kind == "integration":
        return [TaskKind.INTEGRATION_HDL, TaskKind.COMPONENT_TESTBENCH]
    return [TaskKind.SYSTEM_TESTBENCH]


def build_generation_task(state: RunState, unit: UnitState, kind: TaskKind) -> GenerationTask:
    context = _base_context(state, unit)
    if kind is TaskKind.INTEGRATION_HDL:
        context["subcomponents"] = list(state.plan)
    if kind is TaskKind.SYSTEM_TESTBENCH:
        from ..sysverify import TRACE_HEADER

        context["trace_file"] = "dut_trace.csv"
        context["hex_file"] = "program.hex"
        context["cycles"] = state.config.sim_max_cycles
        context["trace_header"] = TRACE_HEADER
    return GenerationTask(kind=kind, context=context, instructions=build_prompt(kind, context))


def build_fix_task(state: RunState, unit: UnitState) -> GenerationTask:
    failure = unit.last_failure or {}
    context = _base_context(state, unit)
    context.update(
        {
            "diagnostics": failure.get("diagnostics", []),
            "stage": failure.get("stage", ""),
            "files": sorted([p, c] for p, c in unit.files.items()),
            "attempt": unit.attempts,
        }
    )
    return GenerationTask(
        kind=TaskKind.FIX, context=context, instructions=build_prompt(TaskKind.FIX, context)
    )


# --- the transition function -------------------------------------------------------

def advance(state: RunState, inputs: list) -> tuple[RunState, list]:
    """Consume completed-work inputs, transition phases, emit next actions."""
    state = copy.deepcopy(state)
    actions: list = []
    for inp in inputs:
        _handle_input(state, inp)
    _schedule(state, actions)
    return state, actions


def _transition(unit: UnitState, target: Phase) -> None:
    from .model import LEGAL_TRANSITIONS

    if target is unit.phase:
        return
    if target not in LEGAL_TRANSITIONS[unit.phase]:
        raise IllegalTransitionError(
            f"{unit.name}: illegal transition {unit.phase.value} -> {target.value}"
        )
    unit.phase = target


def _require_phase(unit: UnitState, *phases: Phase) -> None:
    if unit.phase not in phases:
        raise IllegalTransitionError(
            f"{unit.name}: input not valid in phase {unit.phase.value}"
        )


def _handle_input(state: RunState, inp) -> None:
    if isinstance(inp, GenerationDone):
        _handle_generation(state, inp)
    elif isinstance(inp, GenerationFailed):
        _handle_generation_failed(state, inp)
    elif isinstance(inp, MaterializeDone):
        _handle_materialized(state, inp)
    elif isinstance(inp, LintDone):
        _handle_lint(state, inp)
    elif isinstance(inp, TestDone):
        _handle_test(state, inp)
    elif isinstance(inp, DecisionInput):
        _apply_decision_inplace(state, inp.decision)
    else:
        raise IllegalTransitionError(f"unknown input {inp!r}")


def _record_usage(state: RunState, unit: str, result: GenerationResult) -> None:
    usage = result.usage
    state.ledger = accumulate_usage(state.ledger, usage)
    state.append_event(
        "usage",
        {
            "unit": unit,
            "model": usage.model,
            "prompt_tokens": usage.prompt_tokens,
            "completion_tokens": usage.completion_tokens,
            "total": state.ledger.total,
        },
    )
    if not state.budget_warned and state.ledger.over_budget(state.config.token_budget):
        state.budget_warned = True
        state.append_event(
            "budget_warning",
            {"total": state.ledger.total, "budget": state.config.token_budget},
        )


def _handle_generation(state: RunState, inp: GenerationDone) -> None:
    unit = state.units[inp.unit]
    unit.dispatched.discard(f"generate:{inp.task_kind.value}")
    _record_usage(state, unit.name, inp.result)

    if inp.task_kind is TaskKind.FIX:
        if not unit.fix_requested:
            raise IllegalTransitionError(f"{unit.name}: unsolicited fix result")
        unit.fix_requested = False
        _propose_fix(state, unit, list(list(f) for f in inp.result.files))
        return

    _require_phase(unit, Phase.GENERATING)
    if inp.task_kind.value not in unit.expected_kinds:
        raise IllegalTransitionError(f"{unit.name}: unexpected generation kind {inp.task_kind}")
    unit.staged[inp.task_kind.value] = [list(f) for f in inp.result.files]
    if set(unit.staged) == set(unit.expected_kinds):
        merged: list[list[str]] = []
        for kind in unit.expected_kinds:
            merged.extend(unit.staged[kind])
        unit.staged = {}
        unit.apply_files = merged
        unit.apply_origin = "generation"
        unit.apply_request = None


def _handle_generation_failed(state: RunState, inp: GenerationFailed) -> None:
    unit = state.units[inp.unit]
    unit.dispatched.discard(f"generate:{inp.task_kind.value}")
    diag = {"severity": "error", "message": f"generation backend failed: {inp.message}"}
    if inp.task_kind is TaskKind.FIX:
        # the fix loop itself broke; hand the unit to the engineer
        unit.fix_requested = False
        stage = (unit.last_failure or {}).get("stage", unit.stage_label("lint"))
        _escalate(state, unit, stage, [diag])
        return
    # initial generation failed: retry within the attempt budget
    if unit.attempts < state.config.max_attempts:
        unit.attempts += 1
        return  # marker cleared; the scheduler re-requests the missing kind
    check = "lint" if unit.phase in (Phase.GENERATING, Phase.LINTING) else "unit_test"
    _escalate(state, unit, unit.stage_label(check), [diag])


def _handle_materialized(state: RunState, inp: MaterializeDone) -> None:
    unit = state.units[inp.unit]
    unit.dispatched.discard("materialize")
    for path, content in unit.apply_files:
        unit.files[path] = content
    state.append_event(
        "generated",
        {
            "unit": unit.name,
            "origin": inp.origin,
            "paths": list(inp.paths),
            "request_id": inp.request_id,
        },
    )
    unit.apply_files = []
    unit.apply_origin = ""
    unit.apply_request = None
    _transition(unit, Phase.LINTING)


def _handle_lint(state: RunState, inp: LintDone) -> None:
    unit = state.units[inp.unit]
    unit.dispatched.discard("lint")
    _require_phase(unit, Phase.LINTING)
    report = inp.report
    payload = {
        "unit": unit.name,
        "errors": sum(1 for d in report.diagnostics if d.severity == "error"),
        "warnings": sum(1 for d in report.diagnostics if d.severity == "warning"),
    }
    if report.passed:
        state.append_event("lint_passed", payload)
        _transition(unit, Phase.TESTING)
    else:
        diags = [d.to_json() for d in report.diagnostics if d.severity == "error"]
        payload["diagnostics"] = diags
        state.append_event("lint_failed", payload)
        _fail_stage(state, unit, unit.stage_label("lint"), diags)


def _handle_test(state: RunState, inp: TestDone) -> None:
    unit = state.units[inp.unit]
    unit.dispatched.discard("test")
    _require_phase(unit, Phase.TESTING)
    report = inp.report
    is_system = unit.kind == "system"
    payload = {
        "unit": unit.name,
        "tests_run": report.tests_run,
        "failures": [list(f) for f in report.failures],
    }
    if inp.detail:
        payload["detail"] = inp.detail
    if report.passed:
        state.append_event("sysverify_passed" if is_system else "test_passed", payload)
        _transition(unit, Phase.VERIFIED)
        if unit.kind == "integration":
            state.append_event("integrated", {"unit": unit.name})
    else:
        state.append_event("sysverify_failed" if is_system else "test_failed", payload)
        diags = [
            {"severity": "error", "message": f"{name}: {message}"}
            for name, message in report.failures
        ] or [{"severity": "error", "message": "test run produced no passing tests"}]
        _fail_stage(state, unit, unit.stage_label("unit_test"), diags)


def _fail_stage(state: RunState, unit: UnitState, stage: str, diagnostics: list[dict]) -> None:
    unit.last_failure = {"stage": stage, "diagnostics": diagnostics}
    if unit.attempts < state.config.max_attempts:
        unit.attempts += 1
        unit.fix_requested = True
        return
    _escalate(state, unit, stage, diagnostics)


def _escalate(state: RunState, unit: UnitState, stage: str, diagnostics: list[dict]) -> None:
    _transition(unit, Phase.ESCALATED)
    state.append_event(
        "escalated",
        {"unit": unit.name, "stage": stage, "attempts": unit.attempts},
    )
    request = ApprovalRequest(
        id=state.next_request_id(),
        component=unit.name,
        stage=stage,
        kind="manual",
        diagnostics_summary=_summarize(diagnostics),
        diagnostics=diagnostics,
        proposed_fix=[],
        diff="",
        created_at=state.events[-1].ts,
    )
    state.pending_approvals.append(request)
    unit.active_request = request.id


def _summarize(diagnostics: list[dict]) -> str:
    if not diagnostics:
        return "no diagnostics captured"
    first = diagnostics[0].get("message", "")
    more = f" (+{len(diagnostics) - 1} more)" if len(diagnostics) > 1 else ""
    return first + more


def _unified_diff(unit: UnitState, proposed: list[list[str]]) -> str:
    chunks = []
    for path, new_content in proposed:
        old_content = unit.files.get(path, "")
        fromfile = f"a/{path}" if path in unit.files else "/dev/null"
        diff = difflib.unified_diff(
            old_content.splitlines(keepends=True),
            new_content.splitlines(keepends=True),
            fromfile=fromfile,
            tofile=f"b/{path}",
        )
        chunks.append("".join(diff))
    return "\n".join(chunks)


def _propose_fix(state: RunState, unit: UnitState, files: list[list[str]]) -> None:
    failure = unit.last_failure or {}
    request = ApprovalRequest(
        id=state.next_request_id(),
        component=unit.name,
        stage=failure.get("stage", unit.stage_label("lint")),
        kind="fix",
        diagnostics_summary=_summarize(failure.get("diagnostics", [])),
        diagnostics=failure.get("diagnostics", []),
        proposed_fix=files,
        diff=_unified_diff(unit, files),
        created_at=state.events[-1].ts if state.events else 0.0,
    )
    state.append_event(
        "fix_proposed",
        {
            "unit": unit.name,
            "request_id": request.id,
            "stage": request.stage,
            "paths": [p for p, _ in files],
            "attempt": unit.attempts,
        },
    )
    _transition(unit, Phase.AWAITING_APPROVAL)
    unit.active_request = request.id
    if state.config.auto_approve:
        state.decided_requests.append(request.id)
        state.append_event(
            "approved", {"unit": unit.name, "request_id": request.id, "approver": "auto"}
        )
        _transition(unit, Phase.APPLYING_FIX)
        unit.apply_files = files
        unit.apply_origin = "fix"
        unit.apply_request = request.id
        unit.active_request = None
    else:
        state.pending_approvals.append(request)


def apply_decision(state: RunState, decision: Decision) -> RunState:
    """Apply an approval decision; returns the updated state."""
    state = copy.deepcopy(state)
    _apply_decision_inplace(state, decision)
    return state


def _apply_decision_inplace(state: RunState, decision: Decision) -> None:
    if decision.request_id in state.decided_requests:
        raise StaleRequestError(decision.request_id)
    request = state.find_request(decision.request_id)
    if request is None:
        raise UnknownRequestError(decision.request_id)
    unit = state.units[request.component]
    state.pending_approvals = [r for r in state.pending_approvals if r.id != request.id]
    state.decided_requests.append(request.id)
    unit.active_request = None

    if decision.verdict == "approve":
        state.append_event(
            "approved",
            {"unit": unit.name, "request_id": request.id, "approver": decision.approver},
        )
        if request.kind == "fix":
            _transition(unit, Phase.APPLYING_FIX)
            unit.apply_files = [list(f) for f in request.proposed_fix]
            unit.apply_origin = "fix"
            unit.apply_request = request.id
        else:
            # resume an escalated unit as-is: re-verify what is on disk
            unit.attempts = 0
            _transition(unit, Phase.LINTING)
    elif decision.verdict == "reject":
        state.append_event(
            "rejected",
            {"unit": unit.name, "request_id": request.id, "approver": decision.approver},
        )
        if request.kind == "fix":
            if unit.attempts < state.config.max_attempts:
                unit.attempts += 1
                unit.fix_requested = True
            else:
                _escalate(state, unit, request.stage, request.diagnostics)
        # rejecting a manual escalation leaves the unit Escalated and idle
    elif decision.verdict == "edit":
        if not decision.files:
            raise ValueError("edit decisions must carry file contents")
        diff = _unified_diff(unit, [list(f) for f in decision.files])
        state.append_event(
            "human_edit",
            {
                "unit": unit.name,
                "request_id": request.id,
                "paths": [p for p, _ in decision.files],
                "diff": diff,
            },
        )
        unit.attempts = 0  # a human edit resets the retry budget
        unit.fix_requested = False
        unit.apply_files = [list(f) for f in decision.files]
        unit.apply_origin = "edit"
        unit.apply_request = request.id
        _transition(unit, Phase.LINTING)
    else:
        raise ValueError(f"unknown verdict {decision.verdict!r}")


# --- scheduling ---------------------------------------------------------------------

def _deps_verified(state: RunState, unit: UnitState) -> bool:
    if unit.kind == "component":
        deps = state.blueprint.component(unit.name).dependencies
        return all(state.units[d].phase is Phase.VERIFIED for d in deps)
    if unit.kind == "integration":
        return all(state.units[n].phase is Phase.VERIFIED for n in state.plan)
    # system verification follows integration
    return (
        state.integration_name is not None
        and state.units[state.integration_name].phase is Phase.VERIFIED
    )


def _schedule(state: RunState, actions: list) -> None:
    active = sum(1 for u in state.units.values() if u.phase in ACTIVE_PHASES)

    for name in state.unit_order():
        unit = state.units[name]

        if unit.phase is Phase.PENDING and _deps_verified(state, unit):
            if unit.kind == "component" and active >= state.config.max_parallel:
                continue
            unit.phase = Phase.GENERATING
            unit.expected_kinds = [k.value for k in _generation_kinds(unit)]
            unit.staged = {}
            active += 1

        if unit.phase is Phase.GENERATING:
            for kind in _generation_kinds(unit):
                marker = f"generate:{kind.value}"
                if kind.value not in unit.staged and marker not in unit.dispatched:
                    unit.dispatched.add(marker)
                    actions.append(
                        RequestGeneration(unit.name, build_generation_task(state, unit, kind))
                    )

        if unit.fix_requested and "generate:fix" not in unit.dispatched:
            unit.dispatched.add("generate:fix")
            actions.append(RequestGeneration(unit.name, build_fix_task(state, unit)))

        if unit.apply_files and "materialize" not in unit.dispatched:
            unit.dispatched.add("materialize")
            actions.append(
                Materialize(
                    unit.name,
                    tuple((p, c) for p, c in unit.apply_files),
                    unit.apply_origin,
                    unit.apply_request,
                )
            )

        if (
            unit.phase is Phase.LINTING
            and not unit.apply_files
            and not unit.fix_requested
            and "lint" not in unit.dispatched
        ):
            unit.dispatched.add("lint")
            actions.append(RunLint(unit.name))

        if (
            unit.phase is Phase.TESTING
            and not unit.fix_requested
            and "test" not in unit.dispatched
        ):
            unit.dispatched.add("test")
            actions.append(RunTests(unit.name))

    for request in state.pending_approvals:
        actions.append(AwaitHuman(request))

    if state.units and state.all_verified():
        state.terminal = "done"
    if not state.units:
        state.terminal = "done"
    if state.terminal == "done" and not any(isinstance(a, Done) for a in actions):
        actions.append(Done("done"))


# --- reporting ------------------------------------------------------------------------

def build_report(state: RunState) -> dict:
    """Terminal (or mid-run) report: phases, attempts, token totals vs budget."""
    units = {}
    for name in state.unit_order():
        unit = state.units[name]
        units[name] = {
            "kind": unit.kind,
            "phase": unit.phase.value,
            "attempts": unit.attempts,
        }
    return {
        "schema_version": 1,
        "run_id": state.run_id,
        "project": state.blueprint.project_name,
        "status": state.status(),
        "units": units,
        "pending_approvals": len(state.pending_approvals),
        "events": len(state.events),
        "usage": state.ledger.to_json(),
        "token_budget": state.config.token_budget,
        "over_budget": state.ledger.over_budget(state.config.token_budget),
    }
