"""Control loop: executes emitted actions against real or mock executors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from ..asm import assemble
from ..errors import (
    BackendError,
    ReplayMissError,
    ResultsFormatError,
    ResultsMissingError,
    TraceFormatError,
)
from ..isa import IsaConfig, emit_hex
from ..sysverify import compare_traces, emit_trace, golden_trace, load_trace, report
from ..toolrunners import TestReport, Workspace, materialize
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
)
from .model import ApprovalRequest, Decision, RunState
from .persist import RunStore

ApprovalSource = Callable[[ApprovalRequest, RunState], Optional[Decision]]


def default_program() -> str:
    """The shipped system-verification program (assembly source)."""
    return resources.files("hdlforge").joinpath("data", "verify_program.asm").read_text()


@dataclass
class Executors:
    """Everything the control loop needs to turn actions into inputs."""

    backend: object
    runner: object
    workspace: Workspace
    approval_source: ApprovalSource | None = None

    def execute(self, action, state: RunState):
        if isinstance(action, RequestGeneration):
            return self._generate(action)
        if isinstance(action, Materialize):
            return self._materialize(action, state)
        if isinstance(action, RunLint):
            return self._lint(action, state)
        if isinstance(action, RunTests):
            unit = state.units[action.unit]
            if unit.kind == "system":
                return self._system_verify(action, state)
            return self._unit_test(action, state)
        if isinstance(action, AwaitHuman):
            if self.approval_source is None:
                return None
            decision = self.approval_source(action.request, state)
            return DecisionInput(decision) if decision else None
        raise TypeError(f"unknown action {action!r}")

    # -- generation

    def _generate(self, action: RequestGeneration):
        try:
            result = self.backend.generate(action.task)
        except (BackendError, ReplayMissError) as exc:
            return GenerationFailed(action.unit, action.task.kind, str(exc))
        return GenerationDone(action.unit, action.task.kind, result)

    # -- workspace

    def _unit_dir(self, state: RunState, unit_name: str) -> Path:
        unit = state.units[unit_name]
        return self.workspace.dir_for(unit_name, integration=unit.is_integration_area)

    def _materialize(self, action: Materialize, state: RunState):
        unit = state.units[action.unit]
        written = materialize(
            action.files, self.workspace, action.unit, integration=unit.is_integration_area
        )
        return MaterializeDone(
            action.unit,
            origin=action.origin,
            paths=tuple(str(p.name) for p in written),
            request_id=action.request_id,
        )

    # -- checks

    def _lint(self, action: RunLint, state: RunState):
        cwd = self._unit_dir(state, action.unit)
        cwd.mkdir(parents=True, exist_ok=True)
        files = sorted(p.name for p in cwd.glob("*.sv")) + sorted(
            p.name for p in cwd.glob("*.v")
        )
        report_ = self.runner.lint(action.unit, cwd, files)
        return LintDone(action.unit, report_)

    def _unit_test(self, action: RunTests, state: RunState):
        cwd = self._unit_dir(state, action.unit)
        cwd.mkdir(parents=True, exist_ok=True)
        try:
            report_ = self.runner.unit_test(action.unit, cwd)
        except (ResultsMissingError, ResultsFormatError) as exc:
            report_ = TestReport.make(1, [(action.unit, str(exc))])
        return TestDone(action.unit, report_)

    def _system_verify(self, action: RunTests, state: RunState):
        cwd = self._unit_dir(state, action.unit)
        cwd.mkdir(parents=True, exist_ok=True)
        cfg = IsaConfig.from_parameters(state.blueprint.parameters)
        source = state.config.program_source or default_program()
        image = assemble(source, cfg)
        (cwd / "program.hex").write_text(emit_hex(image, cfg))

        golden = golden_trace(image, state.config.sim_max_cycles, cfg)
        expected_path = cwd / "expected_trace.csv"
        expected_path.write_text(emit_trace(golden, cfg))
        out_path = cwd / "dut_trace.csv"

        try:
            produced = self.runner.system_trace(action.unit, cwd, expected_path, out_path)
            actual = load_trace(Path(produced).read_text())
        except (ResultsMissingError, TraceFormatError) as exc:
            report_ = TestReport.make(1, [("system_trace", str(exc))])
            return TestDone(action.unit, report_)

        divergences = compare_traces(golden, actual)
        text, doc = report(divergences, {"program": image, "cfg": cfg, "expected": golden})
        (cwd / "sysverify_report.txt").write_text(text)
        (cwd / "sysverify_report.json").write_text(json.dumps(doc, indent=2))
        if divergences:
            first = divergences[0]
            failures = [("system_trace",
                         f"divergence at cycle {first.cycle} on {first.signal}")]
        else:
            failures = []
        return TestDone(action.unit, TestReport.make(1, failures, raw_log=text), detail=doc)


def run_to_completion(
    state: RunState,
    executors: Executors,
    store: RunStore | None = None,
) -> RunState:
    """Drive advance() until done or blocked on a human decision.

    Persists after every transition when a store is given; propagated
    executor failures surface as failed-stage inputs rather than crashes.
    """
    inputs: list = []
    while True:
        state, actions = advance(state, inputs)
        if store is not None:
            store.persist(state)
        inputs = []
        done = False
        for action in actions:
            if isinstance(action, Done):
                done = True
                continue
            result = executors.execute(action, state)
            if result is not None:
                inputs.append(result)
        if done:
            return state
        if not inputs:
            # nothing progressed: either finished without a Done (escalated
            # and undecided) or blocked awaiting a human decision
            return state
