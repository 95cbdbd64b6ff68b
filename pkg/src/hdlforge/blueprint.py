"""Parse, validate, and analyze JSON hardware blueprints.

A blueprint is the machine-readable project specification: a global
parameter table plus a list of components with typed ports and
dependencies. Parsing is structural only; semantic rules live in
:func:`consistency_check` so that sloppy generated blueprints still load
and can be diagnosed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (
    BlueprintParseError,
    DependencyCycleError,
    MissingDependencyError,
    WidthResolveError,
)

# Parameter names with a fixed meaning; when present they must be >= 1.
KNOWN_PARAMETERS = (
    "DATA_WIDTH",
    "ADDRESS_WIDTH",
    "INSTRUCTION_WIDTH",
    "REG_ADDR_WIDTH",
    "OPCODE_WIDTH",
    "ALU_OP_WIDTH",
    "IMMEDIATE_WIDTH",
    "JUMP_ADDR_WIDTH",
    "PC_INCREMENT_VAL",
)

DIRECTIONS = ("input", "output")

# Diagnostic rule codes (stable public identifiers).
R1_UNRESOLVED_WIDTH = "R1"
R2_MISSING_DEPENDENCY = "R2"
R3_DEPENDENCY_CYCLE = "R3"
R4_DUPLICATE_NAME = "R4"
R5_TOP_LEVEL = "R5"
R6_ISA_PARAMS = "R6"
R7_WIDTH_MISMATCH = "R7"

RULE_CODES = (
    R1_UNRESOLVED_WIDTH,
    R2_MISSING_DEPENDENCY,
    R3_DEPENDENCY_CYCLE,
    R4_DUPLICATE_NAME,
    R5_TOP_LEVEL,
    R6_ISA_PARAMS,
    R7_WIDTH_MISMATCH,
)


@dataclass(frozen=True)
class PortSpec:
    name: str
    direction: str
    width: int | str
    extra: dict = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    file: str
    description: str = ""
    dependencies: tuple[str, ...] = ()
    status: str = ""
    interface: tuple[PortSpec, ...] = ()
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Blueprint:
    project_name: str
    parameters: dict[str, int]
    components: tuple[ComponentSpec, ...]
    extra: dict = field(default_factory=dict)

    def component(self, name: str) -> ComponentSpec:
        for comp in self.components:
            if comp.name == name:
                return comp
        raise KeyError(name)

    def component_names(self) -> list[str]:
        return [c.name for c in self.components]


@dataclass(frozen=True)
class BlueprintDiagnostic:
    code: str
    severity: str  # "error" | "warning"
    component: str | None
    message: str

    def to_json(self) -> dict:
        return {
            "code": self.code,
            "severity": self.severity,
            "component": self.component,
            "message": self.message,
        }


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise BlueprintParseError(f"missing required field {key!r}", path=path)
    return obj[key]


def _parse_port(obj, path: str) -> PortSpec:
    if not isinstance(obj, dict):
        raise BlueprintParseError("port entry must be an object", path=path)
    name = _require(obj, "name", path)
    direction = _require(obj, "direction", path)
    width = _require(obj, "width", path)
    if not isinstance(name, str) or not name:
        raise BlueprintParseError("port name must be a non-empty string", path=path)
    if direction not in DIRECTIONS:
        raise BlueprintParseError(
            f"port direction must be one of {DIRECTIONS}, got {direction!r}", path=path
        )
    if isinstance(width, bool) or not isinstance(width, (int, str)):
        raise BlueprintParseError("port width must be an integer or a parameter name", path=path)
    extra = {k: v for k, v in obj.items() if k not in ("name", "direction", "width")}
    return PortSpec(name=name, direction=direction, width=width, extra=extra)


def _parse_component(obj, path: str) -> ComponentSpec:
    if not isinstance(obj, dict):
        raise BlueprintParseError("component entry must be an object", path=path)
    name = _require(obj, "name", path)
    file = _require(obj, "file", path)
    if not isinstance(name, str) or not name:
        raise BlueprintParseError("component name must be a non-empty string", path=path)
    if not isinstance(file, str) or not file:
        raise BlueprintParseError("component file must be a non-empty string", path=path)
    if file.startswith("/") or ".." in file.split("/"):
        raise BlueprintParseError(
            f"component file must be a bare relative path, got {file!r}", path=path
        )
    deps = obj.get("dependencies", [])
    if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
        raise BlueprintParseError("dependencies must be a list of component names", path=path)
    interface = obj.get("interface", [])
    if not isinstance(interface, list):
        raise BlueprintParseError("interface must be a list of ports", path=path)
    ports = tuple(
        _parse_port(p, f"{path}.interface[{i}]") for i, p in enumerate(interface)
    )
    known = ("name", "file", "description", "dependencies", "status", "interface")
    extra = {k: v for k, v in obj.items() if k not in known}
    return ComponentSpec(
        name=name,
        file=file,
        description=str(obj.get("description", "")),
        dependencies=tuple(deps),
        status=str(obj.get("status", "")),
        interface=ports,
        extra=extra,
    )


def parse_blueprint(text: str) -> Blueprint:
    """Parse a UTF-8 JSON blueprint document.

    Unknown fields are preserved on the parsed value (and round-trip
    through :func:`emit_blueprint`) but carry no semantics. Raises
    :class:`BlueprintParseError` with byte offset and path information.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BlueprintParseError(f"malformed JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise BlueprintParseError("top-level value must be an object", path="$")

    project_name = _require(doc, "projectName", "$")
    parameters = _require(doc, "parameters", "$")
    components = _require(doc, "components", "$")

    if not isinstance(project_name, str):
        raise BlueprintParseError("projectName must be a string", path="$.projectName")
    if not isinstance(parameters, dict):
        raise BlueprintParseError("parameters must be an object", path="$.parameters")
    for pname, pval in parameters.items():
        if isinstance(pval, bool) or not isinstance(pval, int) or pval < 0:
            raise BlueprintParseError(
                f"parameter {pname!r} must be a non-negative integer, got {pval!r}",
                path=f"$.parameters.{pname}",
            )
    if not isinstance(components, list):
        raise BlueprintParseError("components must be an array", path="$.components")

    comps = tuple(
        _parse_component(c, f"$.components[{i}]") for i, c in enumerate(components)
    )
    extra = {k: v for k, v in doc.items() if k not in ("projectName", "parameters", "components")}
    return Blueprint(
        project_name=project_name,
        parameters=dict(parameters),
        components=comps,
        extra=extra,
    )


def emit_blueprint(bp: Blueprint) -> str:
    """Serialize a blueprint deterministically.

    ``parse_blueprint(emit_blueprint(bp))`` equals ``bp`` structurally, and
    equal values serialize to byte-identical documents.
    """
    def port_obj(p: PortSpec) -> dict:
        obj = {"name": p.name, "direction": p.direction, "width": p.width}
        obj.update(p.extra)
        return obj

    def comp_obj(c: ComponentSpec) -> dict:
        obj = {
            "name": c.name,
            "file": c.file,
            "description": c.description,
            "dependencies": list(c.dependencies),
            "status": c.status,
            "interface": [port_obj(p) for p in c.interface],
        }
        obj.update(c.extra)
        return obj

    doc = {
        "projectName": bp.project_name,
        "parameters": dict(bp.parameters),
        "components": [comp_obj(c) for c in bp.components],
    }
    doc.update(bp.extra)
    return json.dumps(doc, indent=2) + "\n"


def resolve_width(expr: int | str, table: dict[str, int]) -> int:
    """Resolve a width expression to a positive integer.

    Literal widths return themselves; symbolic widths are looked up in the
    parameter table. Any result <= 0 is an error.
    """
    if isinstance(expr, bool):
        raise WidthResolveError(f"width must be an integer or parameter name, got {expr!r}")
    if isinstance(expr, int):
        if expr <= 0:
            raise WidthResolveError(f"width literal must be positive, got {expr}")
        return expr
    if isinstance(expr, str):
        if expr not in table:
            raise WidthResolveError(f"unknown parameter {expr!r}")
        value = table[expr]
        if value <= 0:
            raise WidthResolveError(f"parameter {expr!r} resolves to non-positive width {value}")
        return value
    raise WidthResolveError(f"width must be an integer or parameter name, got {expr!r}")


def dependency_order(bp: Blueprint) -> list[str]:
    """Topologically order component names so dependencies come first.

    Ties break by blueprint declaration order, so equal inputs always
    yield equal plans. Raises :class:`MissingDependencyError` or
    :class:`DependencyCycleError`.
    """
    names = bp.component_names()
    index = {name: i for i, name in enumerate(names)}
    for comp in bp.components:
        for dep in comp.dependencies:
            if dep not in index:
                raise MissingDependencyError(comp.name, dep)

    remaining = {c.name: set(c.dependencies) for c in bp.components}
    order: list[str] = []
    placed: set[str] = set()
    while remaining:
        ready = [n for n in names if n in remaining and remaining[n] <= placed]
        if not ready:
            cycle = _find_cycle(remaining)
            raise DependencyCycleError(cycle)
        for name in ready:
            order.append(name)
            placed.add(name)
            del remaining[name]
    return order


def _find_cycle(deps: dict[str, set[str]]) -> list[str]:
    # All remaining nodes sit on or lead into a cycle; walk until a repeat.
    start = next(iter(deps))
    seen: list[str] = []
    node = start
    while node not in seen:
        seen.append(node)
        node = next(iter(d for d in sorted(deps[node]) if d in deps))
    cycle_start = seen.index(node)
    return seen[cycle_start:] + [node]


def find_top(bp: Blueprint) -> list[str]:
    """Components no other component depends on (integration candidates)."""
    depended = set()
    for comp in bp.components:
        depended.update(comp.dependencies)
    return [c.name for c in bp.components if c.name not in depended]


_ISA_KEYWORDS = ("decode", "decoder", "control")
_ISA_REQUIRED_PARAMS = ("OPCODE_WIDTH", "INSTRUCTION_WIDTH")


def consistency_check(bp: Blueprint) -> list[BlueprintDiagnostic]:
    """Apply the blueprint rule catalog R1-R7.

    R1 every width resolves; R2 every dependency exists; R3 acyclic;
    R4 no duplicate component or port names; R5 unique top-level
    component; R6 decode/control components require the ISA parameters;
    R7 same-named ports agree on width across components. R1-R5 are
    errors, R6-R7 warnings. An empty result means the blueprint is clean.
    """
    diags: list[BlueprintDiagnostic] = []

    def err(code, component, message):
        diags.append(BlueprintDiagnostic(code, "error", component, message))

    def warn(code, component, message):
        diags.append(BlueprintDiagnostic(code, "warning", component, message))

    # R1: widths resolve (and known parameters, when present, are >= 1)
    for pname in KNOWN_PARAMETERS:
        if pname in bp.parameters and bp.parameters[pname] < 1:
            err(R1_UNRESOLVED_WIDTH, None, f"parameter {pname} must be >= 1, got {bp.parameters[pname]}")
    for comp in bp.components:
        for port in comp.interface:
            try:
                resolve_width(port.width, bp.parameters)
            except WidthResolveError as exc:
                err(R1_UNRESOLVED_WIDTH, comp.name, f"port {port.name!r}: {exc}")

    # R2: dependencies exist
    names = set(bp.component_names())
    for comp in bp.components:
        for dep in comp.dependencies:
            if dep not in names:
                err(R2_MISSING_DEPENDENCY, comp.name, f"depends on unknown component {dep!r}")

    # R3: acyclic (only meaningful when all dependencies exist)
    try:
        dependency_order(bp)
    except DependencyCycleError as exc:
        err(R3_DEPENDENCY_CYCLE, None, str(exc))
    except MissingDependencyError:
        pass  # already reported as R2

    # R4: duplicate component names and duplicate port names per component
    seen: set[str] = set()
    for comp in bp.components:
        if comp.name in seen:
            err(R4_DUPLICATE_NAME, comp.name, f"duplicate component name {comp.name!r}")
        seen.add(comp.name)
        port_seen: set[str] = set()
        for port in comp.interface:
            if port.name in port_seen:
                err(R4_DUPLICATE_NAME, comp.name, f"duplicate port name {port.name!r}")
            port_seen.add(port.name)

    # R5: exactly one top-level component (skipped for empty blueprints,
    # which are valid and plan to nothing)
    if bp.components:
        tops = find_top(bp)
        if not tops:
            err(R5_TOP_LEVEL, None, "no top-level component: every component is depended on")
        elif len(tops) > 1:
            err(R5_TOP_LEVEL, None, "multiple top-level candidates: " + ", ".join(tops))

    # R6: decode/control components require the ISA parameters
    needs_isa = [
        c.name
        for c in bp.components
        if any(k in (c.description + " " + c.name).lower() for k in _ISA_KEYWORDS)
    ]
    if needs_isa:
        missing = [p for p in _ISA_REQUIRED_PARAMS if p not in bp.parameters]
        if missing:
            warn(
                R6_ISA_PARAMS,
                needs_isa[0],
                "components handling instruction decode/control "
                f"({', '.join(needs_isa)}) but parameter table lacks {', '.join(missing)}",
            )

    # R7: ports sharing a name across components should agree on width
    widths_by_port: dict[str, dict[int, list[str]]] = {}
    for comp in bp.components:
        for port in comp.interface:
            try:
                w = resolve_width(port.width, bp.parameters)
            except WidthResolveError:
                continue  # already an R1 error
            widths_by_port.setdefault(port.name, {}).setdefault(w, []).append(comp.name)
    for pname in sorted(widths_by_port):
        by_width = widths_by_port[pname]
        if len(by_width) > 1:
            detail = "; ".join(
                f"{w} bits in {', '.join(comps)}" for w, comps in sorted(by_width.items())
            )
            warn(R7_WIDTH_MISMATCH, None, f"port {pname!r} resolves to different widths: {detail}")

    return diags
