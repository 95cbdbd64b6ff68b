"""System-level verification: golden traces, cycle comparison, divergence reports.

The golden model predicts what the integrated design's four debug outputs
should show on every cycle; the generated system testbench dumps the same
signals from the design under test to a CSV file. Comparing the two traces
element-by-element localizes cross-module bugs to the first divergent
cycle and signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import TraceFormatError
from .isa import IsaConfig, MemImage, decode, format_instruction, run

TRACE_SIGNALS = (
    "debug_pc_out",
    "debug_instruction_out",
    "debug_alu_result",
    "debug_reg_write_data",
)
TRACE_HEADER = "cycle," + ",".join(TRACE_SIGNALS)
LENGTH_SIGNAL = "trace_length"


@dataclass(frozen=True)
class TraceRow:
    cycle: int
    debug_pc_out: int
    debug_instruction_out: int
    debug_alu_result: int
    debug_reg_write_data: int

    def signal(self, name: str) -> int:
        return getattr(self, name)


@dataclass(frozen=True)
class DebugTrace:
    rows: tuple[TraceRow, ...]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Divergence:
    cycle: int
    signal: str
    expected: int
    actual: int

    def __post_init__(self):
        if self.expected == self.actual:
            raise ValueError("a divergence must actually differ")

    def to_json(self) -> dict:
        return {
            "cycle": self.cycle,
            "signal": self.signal,
            "expected": self.expected,
            "actual": self.actual,
        }


def golden_trace(
    imem: MemImage,
    cycles: int,
    cfg: IsaConfig = IsaConfig(),
    *,
    pad_after_halt: bool = False,
) -> DebugTrace:
    """Predicted debug outputs for ``cycles`` cycles of the program.

    A halting program yields min(cycles, cycles-to-halt-inclusive) rows;
    with ``pad_after_halt`` the final (frozen) values repeat out to
    ``cycles`` rows, matching a DUT that keeps sampling after HALT.
    """
    _state, records = run(imem, cycles, cfg)
    rows = [
        TraceRow(
            cycle=i,
            debug_pc_out=r.pc,
            debug_instruction_out=r.word,
            debug_alu_result=r.alu_result,
            debug_reg_write_data=r.reg_write_data,
        )
        for i, r in enumerate(records)
    ]
    if pad_after_halt and rows:
        frozen = rows[-1]
        while len(rows) < cycles:
            rows.append(
                TraceRow(
                    cycle=len(rows),
                    debug_pc_out=frozen.debug_pc_out,
                    debug_instruction_out=frozen.debug_instruction_out,
                    debug_alu_result=frozen.debug_alu_result,
                    debug_reg_write_data=frozen.debug_reg_write_data,
                )
            )
    return DebugTrace(rows=tuple(rows))


def compare_traces(expected: DebugTrace, actual: DebugTrace) -> list[Divergence]:
    """Element-wise comparison in (cycle, fixed signal order).

    A length mismatch appends one synthetic divergence on the
    ``trace_length`` pseudo-signal. Identical traces compare empty.
    """
    divergences: list[Divergence] = []
    common = min(len(expected), len(actual))
    for i in range(common):
        for signal in TRACE_SIGNALS:
            e = expected.rows[i].signal(signal)
            a = actual.rows[i].signal(signal)
            if e != a:
                divergences.append(Divergence(cycle=i, signal=signal, expected=e, actual=a))
    if len(expected) != len(actual):
        divergences.append(
            Divergence(cycle=common, signal=LENGTH_SIGNAL,
                       expected=len(expected), actual=len(actual))
        )
    return divergences


def _hex_widths(cfg: IsaConfig) -> tuple[int, int, int, int]:
    return (
        (cfg.address_width + 3) // 4,
        (cfg.instruction_width + 3) // 4,
        (cfg.data_width + 3) // 4,
        (cfg.data_width + 3) // 4,
    )


def emit_trace(trace: DebugTrace, cfg: IsaConfig = IsaConfig()) -> str:
    """CSV form: decimal cycle plus fixed-width uppercase hex fields."""
    w = _hex_widths(cfg)
    lines = [TRACE_HEADER]
    for row in trace.rows:
        lines.append(
            f"{row.cycle},"
            f"{row.debug_pc_out:0{w[0]}X},"
            f"{row.debug_instruction_out:0{w[1]}X},"
            f"{row.debug_alu_result:0{w[2]}X},"
            f"{row.debug_reg_write_data:0{w[3]}X}"
        )
    return "\n".join(lines) + "\n"


def load_trace(text: str, cfg: IsaConfig | None = None) -> DebugTrace:
    """Parse a trace file, validating field count and cycle consecutiveness."""
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise TraceFormatError(1, "empty trace file (missing header)")
    if lines[0].strip() != TRACE_HEADER:
        raise TraceFormatError(1, f"bad header: {lines[0]!r}")
    widths = _hex_widths(cfg) if cfg else None
    rows: list[TraceRow] = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 5:
            raise TraceFormatError(lineno, f"expected 5 fields, got {len(cells)}")
        try:
            cycle = int(cells[0], 10)
            values = [int(c, 16) for c in cells[1:]]
        except ValueError:
            raise TraceFormatError(lineno, f"non-numeric field in {line!r}") from None
        if cycle != len(rows):
            raise TraceFormatError(lineno, f"non-consecutive cycle {cycle}, expected {len(rows)}")
        if widths:
            for cell, width in zip(cells[1:], widths):
                if len(cell) != width:
                    raise TraceFormatError(lineno, f"field {cell!r} must be {width} hex digits")
        rows.append(TraceRow(cycle, *values))
    return DebugTrace(rows=tuple(rows))


def report(
    divergences: list[Divergence],
    context: dict | None = None,
) -> tuple[str, dict]:
    """Human-readable text and a JSON-ready dict for the fix-task bundle.

    ``context`` may carry ``program`` (a MemImage) and ``cfg`` so the first
    divergent cycle can name the instruction that was executing.
    """
    context = context or {}
    doc: dict = {
        "schema_version": 1,
        "verdict": "PASS" if not divergences else "FAIL",
        "divergence_count": len(divergences),
        "divergences": [d.to_json() for d in divergences[:50]],
    }
    if not divergences:
        text = "PASS: traces are identical on all compared cycles\n"
        return text, doc

    first = divergences[0]
    if all(d.signal == LENGTH_SIGNAL for d in divergences):
        doc["verdict"] = "FAIL (trace length)"
    lines = [
        f"{doc['verdict']}: {len(divergences)} divergence(s)",
        f"first at cycle {first.cycle}, signal {first.signal}: "
        f"expected {first.expected:#x}, actual {first.actual:#x}",
    ]
    program: MemImage | None = context.get("program")
    cfg: IsaConfig = context.get("cfg", IsaConfig())
    expected: DebugTrace | None = context.get("expected")
    if first.signal != LENGTH_SIGNAL and expected and first.cycle < len(expected):
        word = expected.rows[first.cycle].debug_instruction_out
        lines.append(_describe_word(word, cfg, doc))
    elif program is not None and first.signal != LENGTH_SIGNAL:
        idx = first.cycle
        if idx < len(program.words):
            lines.append(_describe_word(program.words[idx], cfg, doc))
    text = "\n".join(lines) + "\n"
    doc["summary"] = lines[1]
    return text, doc


def _describe_word(word: int, cfg: IsaConfig, doc: dict) -> str:
    try:
        instr = decode(word, cfg)
        rendered = format_instruction(instr)
    except Exception:
        rendered = "<undecodable>"
    doc["first_instruction"] = {"word": word, "text": rendered}
    return f"instruction at that cycle: {rendered} (word {word:#06x})"


def report_json(divergences: list[Divergence], context: dict | None = None) -> str:
    _text, doc = report(divergences, context)
    return json.dumps(doc, indent=2)
