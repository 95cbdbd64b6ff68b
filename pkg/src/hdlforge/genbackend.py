"""Generation backends: remote chat-completion, deterministic templates, replay.

Every backend consumes a :class:`GenerationTask` and returns a
:class:`GenerationResult` whose file paths are guaranteed to stay inside
the run workspace. The template backend is a pure function of the task
and the shipped template set, which is what makes offline end-to-end
runs reproducible; the replay backend returns fixtures recorded from
earlier (typically remote) generations, keyed by a stable content hash
of the task.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import httpx

from .blueprint import resolve_width
from .errors import (
    BackendError,
    ConfigError,
    PathEscapeError,
    ReplayMissError,
    StoreError,
)
from .isa import IsaConfig, isa_table


class TaskKind(str, Enum):
    BLUEPRINT_PLAN = "blueprint_plan"
    COMPONENT_HDL = "component_hdl"
    COMPONENT_TESTBENCH = "component_testbench"
    FIX = "fix"
    INTEGRATION_HDL = "integration_hdl"
    SYSTEM_TESTBENCH = "system_testbench"


REASONING = "reasoning"
NON_REASONING = "non_reasoning"

# Planning, debugging/fix, and integration-level work goes to a reasoning
# model; per-component code and testbench generation does not.
_DEFAULT_CLASSES = {
    TaskKind.BLUEPRINT_PLAN: REASONING,
    TaskKind.FIX: REASONING,
    TaskKind.INTEGRATION_HDL: REASONING,
    TaskKind.SYSTEM_TESTBENCH: REASONING,
    TaskKind.COMPONENT_HDL: NON_REASONING,
    TaskKind.COMPONENT_TESTBENCH: NON_REASONING,
}


@dataclass(frozen=True)
class GenerationTask:
    kind: TaskKind
    context: dict
    instructions: str

    def __post_init__(self):
        if self.kind is TaskKind.FIX and not self.context.get("diagnostics"):
            raise ValueError("fix tasks must carry at least one diagnostic")


@dataclass
class ModelRoute:
    """Task kind -> (model identifier, model class)."""

    entries: dict[TaskKind, tuple[str, str]]

    @classmethod
    def default(cls, reasoning: str = "gemini-pro", non_reasoning: str = "gpt-5-mini") -> "ModelRoute":
        models = {REASONING: reasoning, NON_REASONING: non_reasoning}
        return cls({kind: (models[klass], klass) for kind, klass in _DEFAULT_CLASSES.items()})

    def override(self, kind: TaskKind, model: str, klass: str | None = None) -> "ModelRoute":
        entries = dict(self.entries)
        entries[kind] = (model, klass or _DEFAULT_CLASSES[kind])
        return ModelRoute(entries)

    def to_json(self) -> dict:
        return {k.value: {"model": m, "class": c} for k, (m, c) in self.entries.items()}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelRoute":
        route = cls.default()
        for key, entry in doc.items():
            route = route.override(TaskKind(key), entry["model"], entry.get("class"))
        return route


def route_model(kind: TaskKind, route: ModelRoute) -> str:
    """Deterministic model lookup; never inspects task content."""
    if kind not in route.entries:
        raise ConfigError(f"no model route for task kind {kind.value!r}")
    return route.entries[kind][0]


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    model: str = ""

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def check_workspace_relative(path: str) -> str:
    """Reject paths that could escape the run workspace."""
    if not path or path.startswith(("/", "\\")) or re.match(r"^[A-Za-z]:", path):
        raise PathEscapeError(f"absolute path not allowed: {path!r}")
    parts = path.replace("\\", "/").split("/")
    if ".." in parts:
        raise PathEscapeError(f"parent-directory segment not allowed: {path!r}")
    return path


@dataclass(frozen=True)
class GenerationResult:
    files: tuple[tuple[str, str], ...]
    usage: Usage
    backend_id: str

    def __post_init__(self):
        for path, _content in self.files:
            check_workspace_relative(path)


@dataclass(frozen=True)
class UsageLedger:
    """Accumulated token spend per model plus the run total."""

    per_model: tuple[tuple[str, int, int], ...] = ()  # (model, prompt, completion)

    @property
    def total_prompt(self) -> int:
        return sum(p for _, p, _ in self.per_model)

    @property
    def total_completion(self) -> int:
        return sum(c for _, _, c in self.per_model)

    @property
    def total(self) -> int:
        return self.total_prompt + self.total_completion

    def over_budget(self, budget: int) -> bool:
        return self.total > budget

    def to_json(self) -> dict:
        return {
            "per_model": [
                {"model": m, "prompt_tokens": p, "completion_tokens": c}
                for m, p, c in self.per_model
            ],
            "total": self.total,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "UsageLedger":
        return cls(
            per_model=tuple(
                (e["model"], e["prompt_tokens"], e["completion_tokens"])
                for e in doc.get("per_model", [])
            )
        )


def accumulate_usage(ledger: UsageLedger, usage: Usage) -> UsageLedger:
    """Fold one usage record into the ledger; totals are order-independent."""
    rows = {m: (p, c) for m, p, c in ledger.per_model}
    prev_p, prev_c = rows.get(usage.model, (0, 0))
    rows[usage.model] = (prev_p + usage.prompt_tokens, prev_c + usage.completion_tokens)
    return UsageLedger(per_model=tuple(sorted((m, p, c) for m, (p, c) in rows.items())))


# --- task fingerprinting ------------------------------------------------------

def task_fingerprint(task: GenerationTask) -> str:
    """Stable content hash of (kind, normalized context, instructions)."""
    canon = json.dumps(
        {"kind": task.kind.value, "context": task.context, "instructions": task.instructions},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:32]


# --- templates ----------------------------------------------------------------

def load_template(name: str) -> str:
    try:
        return resources.files("hdlforge").joinpath("templates", name).read_text()
    except FileNotFoundError:
        raise ConfigError(f"missing template asset {name!r}") from None


def render_template(text: str, mapping: dict[str, str]) -> str:
    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in mapping:
            raise ConfigError(f"template placeholder {{{{{key}}}}} has no value")
        return str(mapping[key])

    return re.sub(r"\{\{(\w+)\}\}", sub, text)


def render_prompt(kind: TaskKind, mapping: dict[str, str]) -> str:
    return render_template(load_template(f"prompt_{kind.value}.txt"), mapping)


# --- backends -----------------------------------------------------------------

class TemplateBackend:
    """Deterministic, offline backend that instantiates shipped templates."""

    backend_id = "template"

    def generate(self, task: GenerationTask) -> GenerationResult:
        handler = {
            TaskKind.COMPONENT_HDL: self._component_hdl,
            TaskKind.COMPONENT_TESTBENCH: self._component_testbench,
            TaskKind.FIX: self._fix,
            TaskKind.INTEGRATION_HDL: self._integration_hdl,
            TaskKind.SYSTEM_TESTBENCH: self._system_testbench,
        }.get(task.kind)
        if handler is None:
            raise BackendError(
                f"template backend does not support {task.kind.value}", kind="unsupported"
            )
        files = handler(task)
        return GenerationResult(files=tuple(files), usage=Usage(0, 0, "template"), backend_id=self.backend_id)

    # -- helpers

    @staticmethod
    def _spec(task: GenerationTask) -> tuple[dict, dict]:
        comp = task.context.get("component")
        if not comp:
            raise BackendError("task context lacks a component spec", kind="malformed")
        return comp, task.context.get("parameters", {})

    @staticmethod
    def _port_decls(comp: dict, params: dict) -> str:
        decls = []
        ports = comp.get("interface", [])
        for port in ports:
            width = resolve_width(port["width"], params)
            vec = "" if width == 1 else f"[{width - 1}:0] "
            dir_kw = {"input": "input  logic", "output": "output logic"}[port["direction"]]
            decls.append(f"  {dir_kw} {vec}{port['name']}")
        return ",\n".join(decls)

    @staticmethod
    def _default_body(comp: dict, params: dict) -> str:
        ports = comp.get("interface", [])
        outputs = [p for p in ports if p["direction"] == "output"]
        has_clk = any(p["name"] == "clk" for p in ports)
        lines = []
        if not outputs:
            lines.append("  // package-style component: no ports to drive")
        elif has_clk:
            lines.append("  always_ff @(posedge clk) begin")
            for p in outputs:
                width = resolve_width(p["width"], params)
                lines.append(f"    {p['name']} <= {{{width}{{1'b0}}}};")
            lines.append("  end")
        else:
            for p in outputs:
                width = resolve_width(p["width"], params)
                lines.append(f"  assign {p['name']} = {{{width}{{1'b0}}}};")
        return "\n".join(lines)

    def _component_hdl(self, task: GenerationTask) -> list[tuple[str, str]]:
        comp, params = self._spec(task)
        text = render_template(
            load_template("hdl_module.sv.tmpl"),
            {
                "file": comp["file"],
                "description": comp.get("description", ""),
                "module_name": comp["name"],
                "port_decls": self._port_decls(comp, params),
                "body": self._default_body(comp, params),
            },
        )
        return [(comp["file"], text)]

    def _component_testbench(self, task: GenerationTask) -> list[tuple[str, str]]:
        comp, _params = self._spec(task)
        stem = Path(comp["file"]).stem
        tb = render_template(
            load_template("cocotb_test.py.tmpl"),
            {"module_name": comp["name"], "test_name": f"{stem}_test"},
        )
        makefile = render_template(
            load_template("makefile.tmpl"),
            {"file": comp["file"], "toplevel": comp["name"], "test_module": f"test_{stem}"},
        )
        return [(f"test_{stem}.py", tb), ("Makefile", makefile)]

    def _fix(self, task: GenerationTask) -> list[tuple[str, str]]:
        files = task.context.get("files") or []
        if not files:
            raise BackendError("fix task carries no files to revise", kind="malformed")
        attempt = task.context.get("attempt", 1)
        out = []
        for path, content in files:
            out.append((path, _stamp_revision(path, content, attempt)))
        return out

    def _integration_hdl(self, task: GenerationTask) -> list[tuple[str, str]]:
        comp, params = self._spec(task)
        subs = task.context.get("subcomponents", [])
        inst = "\n".join(f"  // {name} u_{_snake(name)} ( ... );" for name in subs)
        text = render_template(
            load_template("integration_module.sv.tmpl"),
            {
                "file": comp["file"],
                "module_name": comp["name"],
                "port_decls": self._port_decls(comp, params),
                "instances": inst or "  // no subcomponents",
            },
        )
        return [(comp["file"], text)]

    def _system_testbench(self, task: GenerationTask) -> list[tuple[str, str]]:
        comp, _params = self._spec(task)
        stem = Path(comp["file"]).stem
        tb = render_template(
            load_template("system_testbench.py.tmpl"),
            {
                "module_name": comp["name"],
                "trace_file": task.context.get("trace_file", "dut_trace.csv"),
                "hex_file": task.context.get("hex_file", "program.hex"),
                "cycles": str(task.context.get("cycles", 64)),
            },
        )
        return [(f"test_system_{stem}.py", tb)]


def _snake(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower()


_REV_PREFIXES = {".sv": "//", ".v": "//", ".py": "#", ".mk": "#"}


def _stamp_revision(path: str, content: str, attempt: int) -> str:
    prefix = _REV_PREFIXES.get(Path(path).suffix, "#")
    marker = f"{prefix} revision {attempt}"
    lines = [l for l in content.splitlines() if not l.startswith(f"{prefix} revision ")]
    return "\n".join(lines).rstrip("\n") + f"\n{marker}\n"


class ReplayBackend:
    """Returns previously recorded results keyed by the task fingerprint."""

    backend_id = "replay"

    def __init__(self, store: Path | str):
        self.store = Path(store)

    def generate(self, task: GenerationTask) -> GenerationResult:
        fp = task_fingerprint(task)
        path = self.store / f"{fp}.json"
        if not path.exists():
            raise ReplayMissError(fp)
        doc = json.loads(path.read_text())
        return GenerationResult(
            files=tuple((f[0], f[1]) for f in doc["files"]),
            usage=Usage(**doc["usage"]),
            backend_id=doc.get("backend_id", self.backend_id),
        )


def record_fixture(task: GenerationTask, result: GenerationResult, store: Path | str) -> str:
    """Persist a task -> result fixture; replays of the same task return it."""
    store = Path(store)
    fp = task_fingerprint(task)
    doc = {
        "schema_version": 1,
        "task": {"kind": task.kind.value, "hash": fp},
        "files": [list(f) for f in result.files],
        "usage": {
            "prompt_tokens": result.usage.prompt_tokens,
            "completion_tokens": result.usage.completion_tokens,
            "model": result.usage.model,
        },
        "backend_id": result.backend_id,
    }
    try:
        store.mkdir(parents=True, exist_ok=True)
        tmp = store / f".{fp}.tmp"
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(store / f"{fp}.json")
    except OSError as exc:
        raise StoreError(f"cannot write fixture store {store}: {exc}") from exc
    return fp


_FENCE_RE = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)
_FILENAME_HINT_RE = re.compile(r"(?:filename=|file:)?([\w./-]+\.\w+)\s*$")


def extract_code_blocks(text: str, fallback_file: str | None = None) -> list[tuple[str, str]]:
    """Pull fenced code blocks out of a model response.

    The fence info string may carry a filename hint; hint-less blocks fall
    back to the task's target file (at most one such block).
    """
    files: list[tuple[str, str]] = []
    fallback_used = False
    for match in _FENCE_RE.finditer(text):
        info, body = match.group(1).strip(), match.group(2)
        hint = _FILENAME_HINT_RE.search(info) if info else None
        if hint:
            files.append((hint.group(1), body))
        elif fallback_file and not fallback_used:
            files.append((fallback_file, body))
            fallback_used = True
        else:
            raise BackendError("code block without a usable filename hint", kind="malformed")
    if not files:
        raise BackendError("response contains no code blocks", kind="malformed")
    return files


@dataclass
class RemoteConfig:
    endpoint: str
    credential_env: str = "HDLFORGE_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 1.0


class RemoteBackend:
    """Generic chat-completion HTTP backend (endpoint and model injected)."""

    backend_id = "remote"

    def __init__(self, config: RemoteConfig, route: ModelRoute | None = None,
                 client: httpx.Client | None = None, sleep=time.sleep):
        self.config = config
        self.route = route or ModelRoute.default()
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep

    def generate(self, task: GenerationTask) -> GenerationResult:
        model = route_model(task.kind, self.route)
        headers = {}
        key = os.environ.get(self.config.credential_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": model,
            "messages": [{"role": "user", "content": task.instructions}],
        }
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_exc = exc
                self._sleep(self.config.backoff_base * (2 ** attempt))
                continue
            if resp.status_code in (429, 500, 502, 503):
                retry_after = _parse_retry_after(resp)
                last_exc = BackendError(
                    f"transport error {resp.status_code}", kind="transport", retry_after=retry_after
                )
                self._sleep(retry_after if retry_after is not None
                            else self.config.backoff_base * (2 ** attempt))
                continue
            if resp.status_code != 200:
                raise BackendError(f"request failed with status {resp.status_code}", kind="transport")
            return self._parse_response(task, resp.json(), model)
        raise BackendError(f"exhausted retries: {last_exc}", kind="transport")

    def _parse_response(self, task: GenerationTask, doc: dict, model: str) -> GenerationResult:
        try:
            content = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("response lacks choices[0].message.content", kind="malformed") from None
        comp = task.context.get("component") or {}
        files = extract_code_blocks(content, fallback_file=comp.get("file"))
        usage = doc.get("usage", {})
        return GenerationResult(
            files=tuple(files),
            usage=Usage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                model=model,
            ),
            backend_id=self.backend_id,
        )


def _parse_retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


def make_backend(name: str, *, fixture_store: Path | str | None = None,
                 remote: RemoteConfig | None = None,
                 route: ModelRoute | None = None):
    if name == "template":
        return TemplateBackend()
    if name == "replay":
        if fixture_store is None:
            raise ConfigError("replay backend requires a fixture store directory")
        return ReplayBackend(fixture_store)
    if name == "remote":
        if remote is None:
            raise ConfigError("remote backend requires endpoint configuration")
        return RemoteBackend(remote, route=route)
    raise ConfigError(f"unknown backend {name!r}")


def build_prompt(kind: TaskKind, context: dict, cfg: IsaConfig | None = None) -> str:
    """Render the shipped prompt template for a task kind."""
    comp = context.get("component") or {}
    mapping = {
        "project": str(context.get("project", "")),
        "component_name": comp.get("name", ""),
        "component_json": json.dumps(comp, indent=2) if comp else "{}",
        "parameters_json": json.dumps(context.get("parameters", {}), indent=2),
        "isa_table_json": json.dumps(isa_table(cfg or IsaConfig()), indent=2),
        "diagnostics": json.dumps(context.get("diagnostics", []), indent=2),
        "files": "\n\n".join(
            f"--- {path} ---\n{content}" for path, content in context.get("files", [])
        ),
        "subcomponents": ", ".join(context.get("subcomponents", [])),
        "trace_header": context.get("trace_header", ""),
        "stage": context.get("stage", ""),
    }
    return render_prompt(kind, mapping)
