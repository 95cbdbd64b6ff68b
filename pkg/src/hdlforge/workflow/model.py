"""Workflow data model: phases, events, approval requests, run state."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from ..blueprint import Blueprint, emit_blueprint, parse_blueprint
from ..genbackend import UsageLedger

SCHEMA_VERSION = 1

# Reserved unit key for the system-verification stage (its workspace is the
# integration directory, alongside the top module it checks).
SYSTEM_UNIT = "__system__"


class Phase(str, Enum):
    PENDING = "Pending"
    GENERATING = "Generating"
    LINTING = "Linting"
    TESTING = "Testing"
    AWAITING_APPROVAL = "AwaitingApproval"
    APPLYING_FIX = "ApplyingFix"
    VERIFIED = "Verified"
    ESCALATED = "Escalated"


# A failure at the attempt bound escalates straight from the failing stage;
# a rejected fix with attempts left re-proposes (self-loop on approval).
LEGAL_TRANSITIONS: dict[Phase, set[Phase]] = {
    Phase.PENDING: {Phase.GENERATING},
    Phase.GENERATING: {Phase.LINTING, Phase.ESCALATED},
    Phase.LINTING: {Phase.TESTING, Phase.AWAITING_APPROVAL, Phase.ESCALATED},
    Phase.TESTING: {Phase.VERIFIED, Phase.AWAITING_APPROVAL, Phase.ESCALATED},
    Phase.AWAITING_APPROVAL: {
        Phase.APPLYING_FIX,
        Phase.ESCALATED,
        Phase.LINTING,
        Phase.AWAITING_APPROVAL,
    },
    Phase.APPLYING_FIX: {Phase.LINTING},
    Phase.ESCALATED: {Phase.LINTING},
    Phase.VERIFIED: set(),
}

EVENT_KINDS = (
    "generated",
    "lint_passed",
    "lint_failed",
    "test_passed",
    "test_failed",
    "fix_proposed",
    "approved",
    "rejected",
    "human_edit",
    "escalated",
    "integrated",
    "sysverify_passed",
    "sysverify_failed",
    "usage",
    "budget_warning",
)

APPROVAL_STAGES = ("lint", "unit_test", "integration", "system_verify")


@dataclass
class WorkflowConfig:
    max_attempts: int = 3
    auto_approve: bool = False
    token_budget: int = 1_000_000
    max_parallel: int = 2
    lint_timeout: float = 60.0
    test_timeout: float = 300.0
    backend: str = "template"
    sim_max_cycles: int = 64
    model_routes: dict = field(default_factory=dict)
    program_source: str | None = None

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def to_json(self) -> dict:
        return {
            "max_attempts": self.max_attempts,
            "auto_approve": self.auto_approve,
            "token_budget": self.token_budget,
            "max_parallel": self.max_parallel,
            "lint_timeout": self.lint_timeout,
            "test_timeout": self.test_timeout,
            "backend": self.backend,
            "sim_max_cycles": self.sim_max_cycles,
            "model_routes": self.model_routes,
            "program_source": self.program_source,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "WorkflowConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class EventRecord:
    seq: int
    ts: float
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_json(cls, doc: dict) -> "EventRecord":
        return cls(seq=doc["seq"], ts=doc["ts"], kind=doc["kind"], payload=doc["payload"])


@dataclass
class ApprovalRequest:
    id: str
    component: str
    stage: str  # one of APPROVAL_STAGES
    kind: str  # "fix" (proposed files) or "manual" (escalation, no proposal)
    diagnostics_summary: str
    diagnostics: list[dict]
    proposed_fix: list[list[str]]  # [path, new content] pairs
    diff: str
    created_at: float

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "component": self.component,
            "stage": self.stage,
            "kind": self.kind,
            "diagnostics_summary": self.diagnostics_summary,
            "diagnostics": self.diagnostics,
            "proposed_fix": self.proposed_fix,
            "diff": self.diff,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ApprovalRequest":
        return cls(**doc)


@dataclass
class Decision:
    request_id: str
    verdict: str  # "approve" | "reject" | "edit"
    files: list[list[str]] = field(default_factory=list)  # for edit: [path, content]
    approver: str = "engineer"


@dataclass
class UnitState:
    """Pipeline state of one unit: a leaf component, the integration top,
    or the system-verification stage."""

    name: str
    kind: str  # "component" | "integration" | "system"
    phase: Phase = Phase.PENDING
    attempts: int = 0
    expected_kinds: list[str] = field(default_factory=list)
    staged: dict[str, list[list[str]]] = field(default_factory=dict)
    apply_files: list[list[str]] = field(default_factory=list)
    apply_origin: str = ""
    apply_request: str | None = None
    fix_requested: bool = False
    active_request: str | None = None
    last_failure: dict | None = None
    files: dict[str, str] = field(default_factory=dict)
    dispatched: set = field(default_factory=set)

    @property
    def is_integration_area(self) -> bool:
        return self.kind in ("integration", "system")

    def stage_label(self, check: str) -> str:
        if self.kind == "integration":
            return "integration"
        if self.kind == "system":
            return "system_verify"
        return check  # "lint" or "unit_test"

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "phase": self.phase.value,
            "attempts": self.attempts,
            "expected_kinds": self.expected_kinds,
            "staged": self.staged,
            "apply_files": self.apply_files,
            "apply_origin": self.apply_origin,
            "apply_request": self.apply_request,
            "fix_requested": self.fix_requested,
            "active_request": self.active_request,
            "last_failure": self.last_failure,
            "files": self.files,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "UnitState":
        doc = dict(doc)
        doc["phase"] = Phase(doc["phase"])
        doc.pop("dispatched", None)
        unit = cls(**doc)
        unit.dispatched = set()  # in-flight markers never survive a reload
        return unit


@dataclass
class RunState:
    run_id: str
    blueprint: Blueprint
    plan: list[str]
    units: dict[str, UnitState]
    integration_name: str | None
    config: WorkflowConfig
    pending_approvals: list[ApprovalRequest] = field(default_factory=list)
    decided_requests: list[str] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    ledger: UsageLedger = field(default_factory=UsageLedger)
    request_counter: int = 0
    budget_warned: bool = False
    terminal: str | None = None  # "done" once every unit is Verified

    # -- events

    def append_event(self, kind: str, payload: dict) -> EventRecord:
        assert kind in EVENT_KINDS, f"unknown event kind {kind}"
        last_ts = self.events[-1].ts if self.events else 0.0
        record = EventRecord(
            seq=len(self.events) + 1,
            ts=max(time.time(), last_ts),
            kind=kind,
            payload=payload,
        )
        self.events.append(record)
        return record

    def next_request_id(self) -> str:
        self.request_counter += 1
        return f"req-{self.request_counter:04d}"

    def find_request(self, request_id: str) -> ApprovalRequest | None:
        for req in self.pending_approvals:
            if req.id == request_id:
                return req
        return None

    # -- derived views

    def unit_order(self) -> list[str]:
        order = list(self.plan)
        if self.integration_name:
            order.append(self.integration_name)
        if SYSTEM_UNIT in self.units:
            order.append(SYSTEM_UNIT)
        return order

    def all_verified(self) -> bool:
        return all(u.phase is Phase.VERIFIED for u in self.units.values())

    def status(self) -> str:
        if self.terminal == "done":
            return "done"
        if any(u.phase is Phase.ESCALATED for u in self.units.values()):
            return "escalated"
        if self.pending_approvals:
            return "awaiting_approval"
        return "running"

    # -- serialization

    def to_json(self) -> dict:
        import json as _json

        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "blueprint": _json.loads(emit_blueprint(self.blueprint)),
            "plan": self.plan,
            "units": {name: u.to_json() for name, u in self.units.items()},
            "integration_name": self.integration_name,
            "config": self.config.to_json(),
            "pending_approvals": [r.to_json() for r in self.pending_approvals],
            "decided_requests": self.decided_requests,
            "event_count": len(self.events),
            "ledger": self.ledger.to_json(),
            "request_counter": self.request_counter,
            "budget_warned": self.budget_warned,
            "terminal": self.terminal,
        }

    @classmethod
    def from_json(cls, doc: dict, events: list[EventRecord]) -> "RunState":
        import json as _json

        return cls(
            run_id=doc["run_id"],
            blueprint=parse_blueprint(_json.dumps(doc["blueprint"])),
            plan=list(doc["plan"]),
            units={n: UnitState.from_json(u) for n, u in doc["units"].items()},
            integration_name=doc.get("integration_name"),
            config=WorkflowConfig.from_json(doc.get("config", {})),
            pending_approvals=[ApprovalRequest.from_json(r) for r in doc.get("pending_approvals", [])],
            decided_requests=list(doc.get("decided_requests", [])),
            events=events,
            ledger=UsageLedger.from_json(doc.get("ledger", {})),
            request_counter=doc.get("request_counter", 0),
            budget_warned=doc.get("budget_warned", False),
            terminal=doc.get("terminal"),
        )
