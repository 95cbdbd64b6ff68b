"""Command-line entry point.

Exit codes: 0 success, 1 run failed or escalated, 2 usage/config error,
3 external tool missing. With ``--json`` every outcome, including errors,
is printed as a single machine-parsable JSON line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import blueprint as bpmod
from .asm import assemble
from .errors import (
    AsmError,
    BlueprintParseError,
    ConfigError,
    HdlForgeError,
    HexError,
    PlanError,
    SimulationError,
    StaleRequestError,
    ToolMissingError,
    TraceFormatError,
    UnknownRequestError,
)
from .genbackend import ModelRoute, RemoteConfig, make_backend
from .isa import IsaConfig, emit_hex, load_hex, run as isa_run
from .sysverify import compare_traces, emit_trace, golden_trace, load_trace, report as sv_report
from .toolrunners import MockToolRunner, SubprocessToolRunner, ToolConfig, Workspace
from .workflow import (
    Decision,
    Executors,
    RunStore,
    WorkflowConfig,
    apply_decision,
    build_report,
    plan_run,
    run_to_completion,
)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_USAGE = 2
EXIT_TOOL_MISSING = 3


def _print(payload, as_json: bool, text: str | None = None) -> None:
    if as_json:
        print(json.dumps(payload, separators=(",", ":")))
    else:
        print(text if text is not None else json.dumps(payload, indent=2))


def _error(code: str, message: str, as_json: bool) -> None:
    if as_json:
        print(json.dumps({"error": {"code": code, "message": message}}, separators=(",", ":")))
    else:
        print(f"error ({code}): {message}", file=sys.stderr)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc


def _workflow_config(doc: dict, args) -> WorkflowConfig:
    config = WorkflowConfig.from_json(doc)
    if getattr(args, "auto_approve", False):
        config.auto_approve = True
    if getattr(args, "backend", None):
        config.backend = args.backend
    return config


def _make_runner(doc: dict, args):
    tools = dict(doc.get("tools", {}))
    mode = getattr(args, "tools", None) or tools.get("mode", "subprocess")
    if mode in ("mock-pass", "mock-fail", "mock"):
        return MockToolRunner(
            mode="always_fail" if mode == "mock-fail" else "always_pass",
            fail_lint=frozenset(tools.get("fail_lint_components", [])),
            fail_test=frozenset(tools.get("fail_components", [])),
            sysverify_mutate=bool(tools.get("sysverify_mutate", False)),
        )
    tool_config = ToolConfig(
        lint_cmd=tools.get("lint_cmd", ToolConfig.lint_cmd),
        test_cmd=tools.get("test_cmd", ToolConfig.test_cmd),
        results_file=tools.get("results_file", ToolConfig.results_file),
        lint_timeout=float(tools.get("lint_timeout", ToolConfig.lint_timeout)),
        test_timeout=float(tools.get("test_timeout", ToolConfig.test_timeout)),
    )
    return SubprocessToolRunner(tool_config)


def _make_backend(config: WorkflowConfig, doc: dict, store: RunStore):
    route = ModelRoute.from_json(config.model_routes) if config.model_routes else None
    remote_doc = doc.get("remote")
    remote = RemoteConfig(**remote_doc) if remote_doc else None
    return make_backend(
        config.backend,
        fixture_store=store.fixtures_dir,
        remote=remote,
        route=route,
    )


def _prompt_approval(request, state):
    """Interactive y/n/e approval prompt; returns a Decision or None."""
    if not sys.stdin.isatty():
        return None
    print(f"\n--- approval {request.id}: {request.component} [{request.stage}] ---")
    print(request.diagnostics_summary)
    if request.diff:
        print(request.diff)
    while True:
        answer = input("approve fix? [y]es / [n]o / [e]dit / [s]kip: ").strip().lower()
        if answer in ("y", "yes"):
            return Decision(request_id=request.id, verdict="approve")
        if answer in ("n", "no"):
            return Decision(request_id=request.id, verdict="reject")
        if answer in ("e", "edit"):
            path = input("workspace-relative file to replace: ").strip()
            source = input("local file with new content: ").strip()
            return Decision(
                request_id=request.id,
                verdict="edit",
                files=[[path, Path(source).read_text()]],
            )
        if answer in ("s", "skip"):
            return None


# --- subcommands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    bp = bpmod.parse_blueprint(Path(args.blueprint).read_text())
    diags = bpmod.consistency_check(bp)
    errors = [d for d in diags if d.severity == "error"]
    payload = {
        "project": bp.project_name,
        "components": len(bp.components),
        "diagnostics": [d.to_json() for d in diags],
        "ok": not errors,
    }
    lines = [f"{d.severity.upper()} {d.code} [{d.component or '-'}]: {d.message}" for d in diags]
    text = "\n".join(lines + [f"{'OK' if not errors else 'FAILED'}: "
                              f"{len(errors)} error(s), {len(diags) - len(errors)} warning(s)"])
    _print(payload, args.json, text)
    return EXIT_OK if not errors else EXIT_RUN_FAILED


def cmd_plan(args) -> int:
    bp = bpmod.parse_blueprint(Path(args.blueprint).read_text())
    order = bpmod.dependency_order(bp)
    _print({"order": order}, args.json, "\n".join(order))
    return EXIT_OK


def cmd_run(args) -> int:
    doc = _load_config_file(args.config)
    config = _workflow_config(doc, args)
    bp = bpmod.parse_blueprint(Path(args.blueprint).read_text())
    state = plan_run(bp, config, run_id=args.run_id)
    out_dir = Path(args.out) if args.out else Path("runs") / state.run_id
    store = RunStore(out_dir)
    runner = _make_runner(doc, args)
    backend = _make_backend(config, doc, store)
    approval = None if (config.auto_approve or args.serve) else _prompt_approval
    executors = Executors(
        backend=backend,
        runner=runner,
        workspace=Workspace(store.workspace_root),
        approval_source=approval,
    )

    if args.serve:
        return _run_serving(args, state, store, executors, doc)

    final = run_to_completion(state, executors, store)
    return _finish_run(final, args)


def _finish_run(final, args) -> int:
    report = build_report(final)
    text = _report_text(report)
    _print(report, args.json, text)
    return EXIT_OK if report["status"] == "done" else EXIT_RUN_FAILED


def _run_serving(args, state, store, executors, doc) -> int:
    import threading

    import uvicorn

    from .service import RunManager, create_app

    store.persist(state)
    manager = RunManager(store.root.parent, executor_factory=lambda s: executors)
    run_id = manager.adopt(store)
    app = create_app(manager, token=doc.get("api_token"))
    host, _, port = args.serve.rpartition(":")
    server = uvicorn.Server(
        uvicorn.Config(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    print(f"serving on {args.serve}; run {run_id} in progress", file=sys.stderr)
    manager.kick(run_id)
    try:
        while True:
            manager.wait_idle(run_id, timeout=3600.0)
            summary = manager.summary(run_id)
            if summary["terminal"]:
                break
            if not summary["pending_approvals"]:
                break
            # paused on approvals: keep serving so the dashboard can decide
    except KeyboardInterrupt:
        pass
    server.should_exit = True
    thread.join(timeout=5)
    handle_state = store.load()
    return _finish_run(handle_state, args)


def cmd_resume(args) -> int:
    doc = _load_config_file(args.config)
    store = RunStore(args.dir)
    state = store.load()
    runner = _make_runner(doc, args)
    backend = _make_backend(state.config, doc, store)
    approval = None if state.config.auto_approve else _prompt_approval
    executors = Executors(
        backend=backend,
        runner=runner,
        workspace=Workspace(store.workspace_root),
        approval_source=approval,
    )
    final = run_to_completion(state, executors, store)
    return _finish_run(final, args)


def cmd_approvals(args) -> int:
    store = RunStore(args.dir)
    state = store.load()
    payload = [r.to_json() for r in state.pending_approvals]
    lines = [
        f"{r.id}  {r.component:24s} {r.stage:14s} {r.kind:7s} {r.diagnostics_summary}"
        for r in state.pending_approvals
    ] or ["no pending approvals"]
    _print({"approvals": payload}, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_decide(args) -> int:
    store = RunStore(args.dir)
    state = store.load()
    files: list[list[str]] = []
    if args.verdict == "edit":
        if not args.file:
            raise ConfigError("edit verdict requires a FILE with the new content")
        request = state.find_request(args.request)
        target = args.path
        if target is None and request and request.proposed_fix:
            target = request.proposed_fix[0][0]
        if target is None and request and request.component in state.units:
            unit_files = sorted(state.units[request.component].files)
            target = unit_files[0] if unit_files else None
        if target is None:
            raise ConfigError("cannot infer target path; pass --path")
        files = [[target, Path(args.file).read_text()]]
    decision = Decision(request_id=args.request, verdict=args.verdict, files=files)
    new_state = apply_decision(state, decision)
    store.persist(new_state)
    payload = {"decided": args.request, "verdict": args.verdict,
               "event_seq": new_state.events[-1].seq}
    _print(payload, args.json, f"{args.verdict} recorded for {args.request}; "
                               f"run `hdlforge resume {args.dir}` to continue")
    return EXIT_OK


def cmd_asm(args) -> int:
    cfg = IsaConfig()
    image = assemble(Path(args.source).read_text(), cfg)
    hex_text = emit_hex(image, cfg)
    Path(args.output).write_text(hex_text)
    _print({"words": len(image.words), "output": args.output}, args.json,
           f"assembled {len(image.words)} words -> {args.output}")
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = IsaConfig()
    image = load_hex(Path(args.hex).read_text(), cfg)
    state, records = isa_run(image, args.cycles, cfg)
    if args.trace:
        trace = golden_trace(image, args.cycles, cfg)
        Path(args.trace).write_text(emit_trace(trace, cfg))
    payload = {
        "cycles": len(records),
        "halted": state.halted,
        "pc": state.pc,
        "regs": list(state.regs),
    }
    regs = " ".join(f"r{i}={v}" for i, v in enumerate(state.regs))
    text = (f"ran {len(records)} cycle(s); halted={state.halted} pc={state.pc:#04x}\n{regs}")
    _print(payload, args.json, text)
    return EXIT_OK


def cmd_diff_trace(args) -> int:
    cfg = IsaConfig()
    expected = load_trace(Path(args.expected).read_text())
    actual = load_trace(Path(args.actual).read_text())
    divergences = compare_traces(expected, actual)
    text, doc = sv_report(divergences, {"cfg": cfg, "expected": expected})
    _print(doc, args.json, text.rstrip("\n"))
    return EXIT_OK if not divergences else EXIT_RUN_FAILED


def _report_text(report: dict) -> str:
    lines = [f"run {report['run_id']} ({report['project']}): {report['status']}"]
    for name, unit in report["units"].items():
        attempts = f" attempts={unit['attempts']}" if unit["attempts"] else ""
        lines.append(f"  {name:28s} {unit['phase']:17s}{attempts}")
    usage = report["usage"]
    lines.append(
        f"tokens: {usage['total']:,} / {report['token_budget']:,}"
        + (" OVER BUDGET" if report["over_budget"] else "")
    )
    lines.append(f"events: {report['events']}  pending approvals: {report['pending_approvals']}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    store = RunStore(args.dir)
    state = store.load()
    report = build_report(state)

    from .reporting import render_figures, write_report_csv

    csv_path = Path(args.csv) if args.csv else store.root / "report.csv"
    write_report_csv(report, csv_path)
    figures: list[str] = []
    if not args.no_figures:
        outdir = Path(args.figures) if args.figures else store.root / "figures"
        figures = [str(p) for p in render_figures(report, outdir)]

    payload = dict(report)
    payload["csv"] = str(csv_path)
    payload["figures"] = figures
    text = _report_text(report) + f"\ncsv: {csv_path}"
    if figures:
        text += "\nfigures: " + ", ".join(figures)
    _print(payload, args.json, text)
    return EXIT_OK if report["status"] == "done" else EXIT_RUN_FAILED


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdlforge",
        description="Blueprint-driven HDL generation and verification orchestrator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--json", action="store_true", help="machine-parsable JSON output")
        return p

    p = add("validate", cmd_validate, help="check a blueprint against the rule catalog")
    p.add_argument("blueprint")

    p = add("plan", cmd_plan, help="print the dependency-ordered build plan")
    p.add_argument("blueprint")

    p = add("run", cmd_run, help="execute a full generation and verification run")
    p.add_argument("--blueprint", required=True)
    p.add_argument("--backend", choices=["remote", "template", "replay"], default=None)
    p.add_argument("--auto-approve", action="store_true")
    p.add_argument("--out", help="run directory (default runs/<run_id>)")
    p.add_argument("--run-id")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--tools", choices=["subprocess", "mock-pass", "mock-fail"])
    p.add_argument("--serve", metavar="ADDR", help="host:port to expose the service API")

    p = add("resume", cmd_resume, help="continue a persisted run")
    p.add_argument("dir")
    p.add_argument("--config")
    p.add_argument("--tools", choices=["subprocess", "mock-pass", "mock-fail"])

    p = add("approvals", cmd_approvals, help="list pending approval requests")
    p.add_argument("dir")

    p = add("decide", cmd_decide, help="decide a pending approval request")
    p.add_argument("dir")
    p.add_argument("request")
    p.add_argument("verdict", choices=["approve", "reject", "edit"])
    p.add_argument("file", nargs="?", help="for edit: file with the new content")
    p.add_argument("--path", help="for edit: workspace-relative file to replace")

    p = add("asm", cmd_asm, help="assemble a program to a hex image")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)

    p = add("sim", cmd_sim, help="run the golden model on a hex image")
    p.add_argument("hex")
    p.add_argument("--cycles", type=int, default=256)
    p.add_argument("--trace", help="write the debug trace CSV here")

    p = add("diff-trace", cmd_diff_trace, help="compare an expected and an actual trace")
    p.add_argument("expected")
    p.add_argument("actual")

    p = add("report", cmd_report, help="print phases, attempts, and token totals")
    p.add_argument("dir")
    p.add_argument("--csv", help="summary CSV path (default <dir>/report.csv)")
    p.add_argument("--figures", help="figure output directory (default <dir>/figures)")
    p.add_argument("--no-figures", action="store_true")

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    as_json = getattr(args, "json", False)
    try:
        return args.fn(args)
    except ToolMissingError as exc:
        _error("tool_missing", str(exc), as_json)
        return EXIT_TOOL_MISSING
    except (UnknownRequestError, StaleRequestError) as exc:
        _error("not_found" if isinstance(exc, UnknownRequestError) else "stale_request",
               str(exc), as_json)
        return EXIT_USAGE
    except (BlueprintParseError, PlanError, ConfigError, AsmError, HexError,
            TraceFormatError) as exc:
        _error("invalid_input", str(exc), as_json)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _error("not_found", str(exc), as_json)
        return EXIT_USAGE
    except SimulationError as exc:
        _error("simulation", str(exc), as_json)
        return EXIT_RUN_FAILED
    except HdlForgeError as exc:
        _error("error", str(exc), as_json)
        return EXIT_RUN_FAILED


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
