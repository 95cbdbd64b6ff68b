"""Micro-assembler for authoring golden-model test programs.

One instruction per line, ``//`` comments, ``label:`` definitions, register
operands ``r0..r7`` and immediates ``#n``. CBZ targets are labels or signed
instruction offsets; B targets are labels or absolute byte addresses.
LDUR/STUR accept both the flat form ``LDUR r1, r2, #4`` and the bracketed
``LDUR r1, [r2, #4]``.
"""

from __future__ import annotations

import re

from .errors import AsmError, RangeError
from .isa import (
    D_FORMAT,
    I_FORMAT,
    Instruction,
    IsaConfig,
    MemImage,
    Mnemonic,
    R_FORMAT,
    encode,
)

_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):(.*)$")


def _split_lines(source: str) -> list[tuple[int, str | None, str]]:
    """Yield (lineno, label, statement) with comments and blanks removed."""
    out: list[tuple[int, str | None, str]] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        label = None
        m = _LABEL_RE.match(line)
        if m:
            label, line = m.group(1), m.group(2).strip()
        out.append((lineno, label, line))
    return out


def _parse_reg(token: str, lineno: int, cfg: IsaConfig) -> int:
    m = re.fullmatch(r"[rR](\d+)", token.strip())
    if not m:
        raise AsmError(lineno, f"expected a register r0..r{cfg.num_regs - 1}, got {token!r}")
    idx = int(m.group(1))
    if idx >= cfg.num_regs:
        raise AsmError(lineno, f"register r{idx} out of range (machine has {cfg.num_regs})")
    return idx


def _parse_imm(token: str, lineno: int) -> int:
    token = token.strip()
    if token.startswith("#"):
        token = token[1:]
    try:
        return int(token, 0)
    except ValueError:
        raise AsmError(lineno, f"expected an immediate, got {token!r}") from None


class _LabelIndex(int):
    """Instruction index that came from a label (distinguishes scaling rules)."""


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


def _resolve_target(token: str, labels: dict[str, int], lineno: int) -> int:
    token = token.strip()
    if _IDENT_RE.fullmatch(token):
        if token not in labels:
            raise AsmError(lineno, f"undefined label {token!r}")
        return _LabelIndex(labels[token])
    return _parse_imm(token, lineno)


def assemble(source: str, cfg: IsaConfig = IsaConfig()) -> MemImage:
    """Translate assembly text into an encoded memory image."""
    lines = _split_lines(source)

    labels: dict[str, int] = {}
    idx = 0
    for lineno, label, stmt in lines:
        if label is not None:
            if label in labels:
                raise AsmError(lineno, f"label {label!r} defined twice")
            labels[label] = idx
        if stmt:
            idx += 1

    words: list[int] = []
    idx = 0
    for lineno, _label, stmt in lines:
        if not stmt:
            continue
        words.append(_assemble_one(stmt, idx, lineno, labels, cfg))
        idx += 1
    return MemImage(words=tuple(words))


def _assemble_one(stmt: str, idx: int, lineno: int, labels: dict[str, int], cfg: IsaConfig) -> int:
    text = stmt.replace("[", " ").replace("]", " ")
    parts = text.split(None, 1)
    mnemonic_txt = parts[0].upper()
    try:
        mnemonic = Mnemonic(mnemonic_txt)
    except ValueError:
        raise AsmError(lineno, f"unknown mnemonic {mnemonic_txt!r}") from None
    operands = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []

    def need(n: int):
        if len(operands) != n:
            raise AsmError(lineno, f"{mnemonic.value} takes {n} operands, got {len(operands)}")

    try:
        if mnemonic in (Mnemonic.NOP, Mnemonic.HALT):
            need(0)
            instr = Instruction(mnemonic)
        elif mnemonic in R_FORMAT:
            need(3)
            instr = Instruction(
                mnemonic,
                rd=_parse_reg(operands[0], lineno, cfg),
                rn=_parse_reg(operands[1], lineno, cfg),
                rm=_parse_reg(operands[2], lineno, cfg),
            )
        elif mnemonic in I_FORMAT or mnemonic in D_FORMAT:
            need(3)
            instr = Instruction(
                mnemonic,
                rd=_parse_reg(operands[0], lineno, cfg),
                rn=_parse_reg(operands[1], lineno, cfg),
                imm=_parse_imm(operands[2], lineno),
            )
        elif mnemonic is Mnemonic.CBZ:
            need(2)
            target = _resolve_target(operands[1], labels, lineno)
            offset = target - idx if isinstance(target, _LabelIndex) else target
            instr = Instruction(mnemonic, rd=_parse_reg(operands[0], lineno, cfg), imm=offset)
        elif mnemonic is Mnemonic.B:
            need(1)
            target = _resolve_target(operands[0], labels, lineno)
            addr = target * cfg.pc_increment if isinstance(target, _LabelIndex) else target
            instr = Instruction(mnemonic, imm=addr)
        else:  # pragma: no cover - enum is closed
            raise AsmError(lineno, f"unhandled mnemonic {mnemonic.value}")
        return encode(instr, cfg)
    except RangeError as exc:
        raise AsmError(lineno, str(exc)) from exc
