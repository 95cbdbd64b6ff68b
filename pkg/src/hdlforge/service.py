"""HTTP API over live runs: state, event streaming, approvals, files.

All mutations (decisions, resumes) funnel through a per-run lock so the
control loop stays the single writer; read endpoints serve immutable
snapshots. Event streaming is line-delimited JSON, resumable by sequence
number, and closes when the run reaches a terminal state.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .blueprint import parse_blueprint
from .errors import (
    BlueprintParseError,
    HdlForgeError,
    PathEscapeError,
    PlanError,
    RunNotFoundError,
    StaleRequestError,
    UnknownRequestError,
)
from .genbackend import check_workspace_relative
from .toolrunners import Workspace
from .workflow import (
    Decision,
    Done,
    Executors,
    RunState,
    RunStore,
    WorkflowConfig,
    advance,
    apply_decision,
    build_report,
    plan_run,
)

SCHEMA_VERSION = 1
STREAM_POLL_SECONDS = 0.1


@dataclass
class RunHandle:
    run_id: str
    store: RunStore
    state: RunState
    lock: threading.RLock = field(default_factory=threading.RLock)
    cond: threading.Condition = None  # type: ignore[assignment]
    thread: threading.Thread | None = None
    pending_inputs: list = field(default_factory=list)

    def __post_init__(self):
        if self.cond is None:
            self.cond = threading.Condition(self.lock)


def _summary(state: RunState) -> dict:
    report = build_report(state)
    return {
        "schema_version": SCHEMA_VERSION,
        "run_id": state.run_id,
        "project_name": state.blueprint.project_name,
        "status": report["status"],
        "terminal": state.terminal == "done",
        "units": report["units"],
        "pending_approvals": len(state.pending_approvals),
        "usage": report["usage"],
        "token_budget": report["token_budget"],
        "over_budget": report["over_budget"],
    }


class RunManager:
    """Owns run handles, their control-loop threads, and the runs directory."""

    def __init__(
        self,
        runs_root: Path | str,
        executor_factory: Callable[[RunStore], Executors] | None = None,
    ):
        self.runs_root = Path(runs_root)
        self.runs_root.mkdir(parents=True, exist_ok=True)
        self.executor_factory = executor_factory or default_executor_factory
        self._handles: dict[str, RunHandle] = {}
        self._registry_lock = threading.Lock()

    # -- registry

    def _handle(self, run_id: str) -> RunHandle:
        with self._registry_lock:
            if run_id in self._handles:
                return self._handles[run_id]
            store = RunStore(self.runs_root / run_id)
            try:
                state = store.load()
            except FileNotFoundError:
                raise RunNotFoundError(run_id) from None
            handle = RunHandle(run_id=run_id, store=store, state=state)
            self._handles[run_id] = handle
            return handle

    def run_ids(self) -> list[str]:
        with self._registry_lock:
            known = set(self._handles)
        if self.runs_root.is_dir():
            for entry in sorted(self.runs_root.iterdir()):
                if (entry / "state.json").is_file():
                    known.add(entry.name)
        return sorted(known)

    def adopt(self, store: RunStore) -> str:
        """Register an existing run directory (e.g. one the CLI created)."""
        state = store.load()
        handle = RunHandle(run_id=state.run_id, store=store, state=state)
        with self._registry_lock:
            self._handles[state.run_id] = handle
        return state.run_id

    # -- lifecycle

    def create_run(
        self,
        blueprint_text: str,
        config: WorkflowConfig | None = None,
        run_id: str | None = None,
        autostart: bool = True,
    ) -> str:
        bp = parse_blueprint(blueprint_text)
        state = plan_run(bp, config, run_id=run_id)
        store = RunStore(self.runs_root / state.run_id)
        handle = RunHandle(run_id=state.run_id, store=store, state=state)
        with handle.cond:
            self._persist(handle, state)
        with self._registry_lock:
            self._handles[state.run_id] = handle
        if autostart:
            self.kick(state.run_id)
        return state.run_id

    def _persist(self, handle: RunHandle, state: RunState) -> None:
        handle.store.persist(state)
        handle.state = state
        handle.cond.notify_all()

    def kick(self, run_id: str) -> None:
        """Start (or restart) the control loop for a run."""
        handle = self._handle(run_id)
        with handle.lock:
            if handle.thread is not None and handle.thread.is_alive():
                return
            handle.thread = threading.Thread(
                target=self._loop, args=(handle,), daemon=True, name=f"run-{run_id}"
            )
            handle.thread.start()

    def _loop(self, handle: RunHandle) -> None:
        executors = self.executor_factory(handle.store)
        while True:
            with handle.cond:
                state, actions = advance(handle.state, handle.pending_inputs)
                handle.pending_inputs = []
                self._persist(handle, state)
            runnable = [a for a in actions if not isinstance(a, Done)]
            if any(isinstance(a, Done) for a in actions) or not runnable:
                return
            inputs = []
            for action in runnable:
                result = executors.execute(action, state)
                if result is not None:
                    inputs.append(result)
            if not inputs:
                return  # blocked on human decisions arriving via the API
            with handle.cond:
                handle.pending_inputs.extend(inputs)

    # -- queries

    def summary(self, run_id: str) -> dict:
        handle = self._handle(run_id)
        with handle.lock:
            return _summary(handle.state)

    def detail(self, run_id: str, recent: int = 50) -> dict:
        handle = self._handle(run_id)
        with handle.lock:
            doc = _summary(handle.state)
            doc["recent_events"] = [e.to_json() for e in handle.state.events[-recent:]]
            doc["approvals"] = [r.to_json() for r in handle.state.pending_approvals]
            return doc

    def events_since(self, run_id: str, since: int) -> tuple[list[dict], bool]:
        handle = self._handle(run_id)
        with handle.lock:
            events = [e.to_json() for e in handle.state.events if e.seq > since]
            return events, handle.state.terminal == "done"

    def ensure(self, run_id: str) -> None:
        self._handle(run_id)

    def stream(self, run_id: str, since: int) -> Iterator[str]:
        """Events with seq > since, then the live tail; closes when done."""
        handle = self._handle(run_id)
        cursor = since
        while True:
            with handle.cond:
                events = [e.to_json() for e in handle.state.events if e.seq > cursor]
                if not events:
                    if handle.state.terminal == "done":
                        return
                    handle.cond.wait(STREAM_POLL_SECONDS)
                    events = [e.to_json() for e in handle.state.events if e.seq > cursor]
            for event in events:
                cursor = event["seq"]
                yield json.dumps(event) + "\n"

    # -- mutations

    def submit_decision(self, run_id: str, decision: Decision) -> int:
        handle = self._handle(run_id)
        for path, _ in decision.files:
            check_workspace_relative(path)
        with handle.cond:
            new_state = apply_decision(handle.state, decision)
            self._persist(handle, new_state)
            seq = new_state.events[-1].seq
        self.kick(run_id)
        return seq

    def resume(self, run_id: str) -> dict:
        self.kick(run_id)
        return self.summary(run_id)

    def wait_idle(self, run_id: str, timeout: float = 60.0) -> None:
        handle = self._handle(run_id)
        deadline = time.time() + timeout
        while time.time() < deadline:
            thread = handle.thread
            if thread is None or not thread.is_alive():
                return
            thread.join(0.05)

    # -- files and diffs

    def file_view(self, run_id: str, rel_path: str) -> dict:
        handle = self._handle(run_id)
        check_workspace_relative(rel_path)
        root = handle.store.workspace_root
        target = root / rel_path
        if not target.is_file():
            raise FileNotFoundError(rel_path)
        attempts_dir = target.parent / "attempts"
        history = []
        if attempts_dir.is_dir():
            slug = target.name
            versions = sorted(
                attempts_dir.glob(f"{slug}.*"), key=lambda p: int(p.suffix[1:])
            )
            history = [p.read_text() for p in versions]
        return {
            "schema_version": SCHEMA_VERSION,
            "path": rel_path,
            "content": target.read_text(),
            "attempts": history,
        }

    def diff_for(self, request_id: str) -> str:
        for run_id in self.run_ids():
            handle = self._handle(run_id)
            with handle.lock:
                request = handle.state.find_request(request_id)
            if request is not None:
                return request.diff
        raise UnknownRequestError(request_id)


def default_executor_factory(store: RunStore) -> Executors:
    from .genbackend import TemplateBackend
    from .toolrunners import MockToolRunner

    return Executors(
        backend=TemplateBackend(),
        runner=MockToolRunner(),
        workspace=Workspace(store.workspace_root),
        approval_source=None,
    )


# --- HTTP layer -----------------------------------------------------------------


class DecisionBody(BaseModel):
    request_id: str
    verdict: str
    files: list[list[str]] = []
    approver: str = "engineer"


class CreateRunBody(BaseModel):
    blueprint: dict | str
    config: dict = {}
    run_id: Optional[str] = None


def create_app(manager: RunManager, token: str | None = None) -> FastAPI:
    app = FastAPI(title="hdlforge service", version="0.1.0")

    def auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(HTTPException)
    def _http_error(_request, exc: HTTPException):
        code = "unauthorized" if exc.status_code == 401 else "error"
        return error(exc.status_code, code, str(exc.detail))

    @app.exception_handler(HdlForgeError)
    def _domain_error(_request, exc: HdlForgeError):
        if isinstance(exc, (RunNotFoundError, UnknownRequestError)):
            return error(404, "not_found", str(exc))
        if isinstance(exc, StaleRequestError):
            return error(409, "stale_request", str(exc))
        if isinstance(exc, PathEscapeError):
            return error(400, "validation", str(exc))
        if isinstance(exc, (BlueprintParseError, PlanError)):
            return error(400, "bad_blueprint", str(exc))
        return error(500, "internal", str(exc))

    @app.exception_handler(FileNotFoundError)
    def _missing(_request, exc: FileNotFoundError):
        return error(404, "not_found", str(exc))

    @app.get("/runs")
    def list_runs(_: None = Depends(auth)):
        return [manager.summary(run_id) for run_id in manager.run_ids()]

    @app.post("/runs")
    def create_run(body: CreateRunBody, _: None = Depends(auth)):
        blueprint_text = (
            body.blueprint if isinstance(body.blueprint, str) else json.dumps(body.blueprint)
        )
        config = WorkflowConfig.from_json(body.config) if body.config else None
        run_id = manager.create_run(blueprint_text, config, run_id=body.run_id)
        return {"schema_version": SCHEMA_VERSION, "run_id": run_id}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str, _: None = Depends(auth)):
        return manager.detail(run_id)

    @app.get("/runs/{run_id}/events")
    def stream_events(run_id: str, since: int = 0, follow: bool = True,
                      _: None = Depends(auth)):
        manager.ensure(run_id)  # 404 before the stream starts
        if not follow:
            events, _terminal = manager.events_since(run_id, since)
            body = "".join(json.dumps(e) + "\n" for e in events)
            return PlainTextResponse(body, media_type="application/x-ndjson")
        return StreamingResponse(
            manager.stream(run_id, since), media_type="application/x-ndjson"
        )

    @app.get("/runs/{run_id}/files")
    def get_file(run_id: str, path: str, _: None = Depends(auth)):
        return manager.file_view(run_id, path)

    @app.get("/approvals/{request_id}/diff")
    def get_diff(request_id: str, _: None = Depends(auth)):
        return PlainTextResponse(manager.diff_for(request_id), media_type="text/x-diff")

    @app.post("/runs/{run_id}/decisions")
    def submit_decision(run_id: str, body: DecisionBody, _: None = Depends(auth)):
        if body.verdict not in ("approve", "reject", "edit"):
            return error(400, "validation", f"unknown verdict {body.verdict!r}")
        decision = Decision(
            request_id=body.request_id,
            verdict=body.verdict,
            files=[list(f) for f in body.files],
            approver=body.approver,
        )
        seq = manager.submit_decision(run_id, decision)
        return {"schema_version": SCHEMA_VERSION, "ack": True, "event_seq": seq}

    @app.post("/runs/{run_id}/resume")
    def resume(run_id: str, _: None = Depends(auth)):
        return manager.resume(run_id)

    return app
