"""Exception taxonomy shared across hdlforge modules."""

from __future__ import annotations


class HdlForgeError(Exception):
    """Base class for all hdlforge errors."""


# --- blueprint -------------------------------------------------------------

class BlueprintParseError(HdlForgeError):
    """Malformed blueprint document or missing required field."""

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        self.path = path
        self.offset = offset
        loc = []
        if path:
            loc.append(f"at {path}")
        if offset is not None:
            loc.append(f"offset {offset}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)


class WidthResolveError(HdlForgeError):
    """Width expression does not resolve to a positive integer."""


class MissingDependencyError(HdlForgeError):
    def __init__(self, component: str, dependency: str):
        self.component = component
        self.dependency = dependency
        super().__init__(f"component {component!r} depends on unknown component {dependency!r}")


class DependencyCycleError(HdlForgeError):
    def __init__(self, members: list[str]):
        self.members = members
        super().__init__("dependency cycle: " + " -> ".join(members))


# --- isa -------------------------------------------------------------------

class IsaError(HdlForgeError):
    """Base class for golden-model errors."""


class RangeError(IsaError):
    """Instruction field value overflows its bit slot."""


class DecodeError(IsaError):
    """Instruction word carries an unassigned opcode."""


class FetchError(IsaError):
    """Program counter points outside the loaded memory image."""


class HexError(IsaError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class AsmError(IsaError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SimulationError(IsaError):
    """Wraps a step error with the cycle at which it occurred."""

    def __init__(self, cycle: int, cause: IsaError):
        self.cycle = cycle
        self.cause = cause
        super().__init__(f"cycle {cycle}: {cause}")


# --- genbackend ------------------------------------------------------------

class ConfigError(HdlForgeError):
    """Missing or inconsistent configuration entry."""


class BackendError(HdlForgeError):
    def __init__(self, message: str, kind: str = "transport", retry_after: float | None = None):
        self.kind = kind
        self.retry_after = retry_after
        super().__init__(message)


class ReplayMissError(HdlForgeError):
    def __init__(self, task_hash: str):
        self.task_hash = task_hash
        super().__init__(f"no recorded fixture for task {task_hash}")


class StoreError(HdlForgeError):
    """Fixture store directory is unusable."""


class PathEscapeError(HdlForgeError):
    """A produced or requested path would escape the run workspace."""


# --- toolrunners -----------------------------------------------------------

class ToolMissingError(HdlForgeError):
    def __init__(self, command: str):
        self.command = command
        super().__init__(f"external tool not found: {command}")


class ResultsMissingError(HdlForgeError):
    """Tool run ended without producing its results file."""


class ResultsFormatError(HdlForgeError):
    """Results file exists but cannot be parsed."""


# --- workflow --------------------------------------------------------------

class PlanError(HdlForgeError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        msgs = "; ".join(f"{d.code}: {d.message}" for d in diagnostics)
        super().__init__(f"blueprint has consistency errors: {msgs}")


class IllegalTransitionError(HdlForgeError):
    """An input arrived that does not match the unit's current phase."""


class UnknownRequestError(HdlForgeError):
    def __init__(self, request_id: str):
        self.request_id = request_id
        super().__init__(f"no pending approval request {request_id!r}")


class StaleRequestError(HdlForgeError):
    def __init__(self, request_id: str):
        self.request_id = request_id
        super().__init__(f"approval request {request_id!r} was already decided")


class CorruptStateError(HdlForgeError):
    """Persisted state snapshot and event journal disagree."""


# --- sysverify -------------------------------------------------------------

class TraceFormatError(HdlForgeError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


# --- service ---------------------------------------------------------------

class RunNotFoundError(HdlForgeError):
    def __init__(self, run_id: str):
        self.run_id = run_id
        super().__init__(f"unknown run {run_id!r}")
