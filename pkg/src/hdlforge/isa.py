"""Golden-model simulator for the 16-bit LEGv8-like single-cycle machine.

Everything here is a pure function over immutable values: architectural
states, memory images, and instructions are frozen dataclasses, and
``step`` returns a new state instead of mutating its input. The encoding
table below is the single normative definition shared by the simulator,
the assembler, and the prompt material handed to generation backends
(exported as JSON via :func:`isa_table`).

Encoding (instruction_width=16, opcode in the top 4 bits):

========  ======  ========================================================
mnemonic  opcode  layout
========  ======  ========================================================
NOP       0x0     all remaining bits zero
ADD       0x1     R: rd[11:9] rn[8:6] rm[5:3] 0[2:0]
SUB       0x2     R
AND       0x3     R
ORR       0x4     R
ADDI      0x5     I: rd[11:9] rn[8:6] imm6[5:0] (signed)
SUBI      0x6     I
LDUR      0x7     D: rt[11:9] rn[8:6] imm6[5:0] (signed byte offset)
STUR      0x8     D
CBZ       0x9     CB: rt[11:9] 0[8:6] imm6[5:0] (signed instruction offset)
B         0xA     B: addr12[11:0] (absolute byte address)
HALT      0xF     all remaining bits zero
========  ======  ========================================================

Opcodes 0xB-0xE are unassigned and decode as errors; an illegal opcode
aborts a golden run rather than acting as a NOP, because silently
skipping is exactly the kind of divergence system verification exists
to catch.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import DecodeError, FetchError, HexError, RangeError, SimulationError


@dataclass(frozen=True)
class IsaConfig:
    """Bit widths and stride of the modeled machine."""

    data_width: int = 8
    address_width: int = 8
    instruction_width: int = 16
    reg_addr_width: int = 3
    opcode_width: int = 4
    immediate_width: int = 6
    jump_addr_width: int = 12
    pc_increment: int = 2
    alu_op_width: int = 3  # blueprint parameter; not consumed by the model

    def __post_init__(self):
        iw, ow, rw = self.instruction_width, self.opcode_width, self.reg_addr_width
        if ow + 3 * rw > iw:
            raise ValueError("register fields do not fit the instruction word")
        if ow + 2 * rw + self.immediate_width > iw:
            raise ValueError("immediate field does not fit the instruction word")
        if ow + self.jump_addr_width > iw:
            raise ValueError("jump field does not fit the instruction word")
        if self.pc_increment < 1:
            raise ValueError("pc_increment must be >= 1")

    @classmethod
    def from_parameters(cls, table: dict[str, int]) -> "IsaConfig":
        defaults = cls()
        return cls(
            data_width=table.get("DATA_WIDTH", defaults.data_width),
            address_width=table.get("ADDRESS_WIDTH", defaults.address_width),
            instruction_width=table.get("INSTRUCTION_WIDTH", defaults.instruction_width),
            reg_addr_width=table.get("REG_ADDR_WIDTH", defaults.reg_addr_width),
            opcode_width=table.get("OPCODE_WIDTH", defaults.opcode_width),
            immediate_width=table.get("IMMEDIATE_WIDTH", defaults.immediate_width),
            jump_addr_width=table.get("JUMP_ADDR_WIDTH", defaults.jump_addr_width),
            pc_increment=table.get("PC_INCREMENT_VAL", defaults.pc_increment),
            alu_op_width=table.get("ALU_OP_WIDTH", defaults.alu_op_width),
        )

    @property
    def data_mask(self) -> int:
        return (1 << self.data_width) - 1

    @property
    def addr_mask(self) -> int:
        return (1 << self.address_width) - 1

    @property
    def word_mask(self) -> int:
        return (1 << self.instruction_width) - 1

    @property
    def num_regs(self) -> int:
        return 1 << self.reg_addr_width

    @property
    def mem_size(self) -> int:
        return 1 << self.address_width

    @property
    def hex_digits(self) -> int:
        return (self.instruction_width + 3) // 4


class Mnemonic(str, Enum):
    NOP = "NOP"
    ADD = "ADD"
    SUB = "SUB"
    AND = "AND"
    ORR = "ORR"
    ADDI = "ADDI"
    SUBI = "SUBI"
    LDUR = "LDUR"
    STUR = "STUR"
    CBZ = "CBZ"
    B = "B"
    HALT = "HALT"


OPCODES: dict[Mnemonic, int] = {
    Mnemonic.NOP: 0x0,
    Mnemonic.ADD: 0x1,
    Mnemonic.SUB: 0x2,
    Mnemonic.AND: 0x3,
    Mnemonic.ORR: 0x4,
    Mnemonic.ADDI: 0x5,
    Mnemonic.SUBI: 0x6,
    Mnemonic.LDUR: 0x7,
    Mnemonic.STUR: 0x8,
    Mnemonic.CBZ: 0x9,
    Mnemonic.B: 0xA,
    Mnemonic.HALT: 0xF,
}
MNEMONIC_BY_OPCODE = {op: mn for mn, op in OPCODES.items()}

R_FORMAT = (Mnemonic.ADD, Mnemonic.SUB, Mnemonic.AND, Mnemonic.ORR)
I_FORMAT = (Mnemonic.ADDI, Mnemonic.SUBI)
D_FORMAT = (Mnemonic.LDUR, Mnemonic.STUR)


def instruction_format(mnemonic: Mnemonic) -> str:
    if mnemonic in R_FORMAT:
        return "R"
    if mnemonic in I_FORMAT:
        return "I"
    if mnemonic in D_FORMAT:
        return "D"
    if mnemonic is Mnemonic.CBZ:
        return "CB"
    if mnemonic is Mnemonic.B:
        return "B"
    return "Z"  # NOP / HALT: zero operand fields


@dataclass(frozen=True)
class Instruction:
    mnemonic: Mnemonic
    rd: int = 0
    rn: int = 0
    rm: int = 0
    imm: int = 0


@dataclass(frozen=True)
class MemImage:
    """Ordered instruction words plus the byte address of the first one."""

    words: tuple[int, ...]
    origin: int = 0

    def __len__(self) -> int:
        return len(self.words)

    def word_at(self, pc: int, cfg: IsaConfig) -> int:
        off = pc - self.origin
        if off < 0 or off % cfg.pc_increment != 0:
            raise FetchError(f"pc {pc:#06x} is misaligned or before the image origin")
        idx = off // cfg.pc_increment
        if idx >= len(self.words):
            raise FetchError(f"pc {pc:#06x} is outside the loaded image")
        return self.words[idx]


def sign_extend(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    if value & (1 << (bits - 1)):
        return value - (1 << bits)
    return value


def _check_reg(value: int, cfg: IsaConfig, field_name: str) -> int:
    if not 0 <= value < cfg.num_regs:
        raise RangeError(f"{field_name}={value} does not fit {cfg.reg_addr_width} bits")
    return value


def encode(instr: Instruction, cfg: IsaConfig = IsaConfig()) -> int:
    """Pack an instruction into a word. Raises RangeError on field overflow."""
    iw, ow, rw = cfg.instruction_width, cfg.opcode_width, cfg.reg_addr_width
    op_shift = iw - ow
    rd_shift = op_shift - rw
    rn_shift = rd_shift - rw
    rm_shift = rn_shift - rw
    word = OPCODES[instr.mnemonic] << op_shift
    fmt = instruction_format(instr.mnemonic)

    if fmt == "R":
        word |= _check_reg(instr.rd, cfg, "rd") << rd_shift
        word |= _check_reg(instr.rn, cfg, "rn") << rn_shift
        word |= _check_reg(instr.rm, cfg, "rm") << rm_shift
    elif fmt in ("I", "D", "CB"):
        imw = cfg.immediate_width
        if not -(1 << (imw - 1)) <= instr.imm < (1 << imw):
            raise RangeError(f"imm={instr.imm} does not fit {imw} bits")
        word |= _check_reg(instr.rd, cfg, "rd") << rd_shift
        word |= _check_reg(instr.rn, cfg, "rn") << rn_shift
        word |= (instr.imm & ((1 << imw) - 1))
    elif fmt == "B":
        jw = cfg.jump_addr_width
        if not 0 <= instr.imm < (1 << jw):
            raise RangeError(f"jump target {instr.imm} does not fit {jw} bits")
        word |= instr.imm
    # Z format: no operand fields
    return word


def decode(word: int, cfg: IsaConfig = IsaConfig()) -> Instruction:
    """Inverse of encode. Raises DecodeError for unassigned opcodes."""
    if not 0 <= word <= cfg.word_mask:
        raise DecodeError(f"word {word:#x} exceeds {cfg.instruction_width} bits")
    iw, ow, rw = cfg.instruction_width, cfg.opcode_width, cfg.reg_addr_width
    op_shift = iw - ow
    opcode = word >> op_shift
    mnemonic = MNEMONIC_BY_OPCODE.get(opcode)
    if mnemonic is None:
        raise DecodeError(f"illegal opcode {opcode:#x} in word {word:#06x}")

    rd_shift = op_shift - rw
    rn_shift = rd_shift - rw
    rm_shift = rn_shift - rw
    reg_mask = cfg.num_regs - 1
    fmt = instruction_format(mnemonic)

    if fmt == "R":
        return Instruction(
            mnemonic,
            rd=(word >> rd_shift) & reg_mask,
            rn=(word >> rn_shift) & reg_mask,
            rm=(word >> rm_shift) & reg_mask,
        )
    if fmt in ("I", "D", "CB"):
        return Instruction(
            mnemonic,
            rd=(word >> rd_shift) & reg_mask,
            rn=(word >> rn_shift) & reg_mask,
            imm=sign_extend(word, cfg.immediate_width),
        )
    if fmt == "B":
        return Instruction(mnemonic, imm=word & ((1 << cfg.jump_addr_width) - 1))
    return Instruction(mnemonic)  # NOP / HALT decode to canonical zero fields


@dataclass(frozen=True)
class ArchState:
    """Architectural state: pc, registers, data memory, halt flag."""

    pc: int
    regs: tuple[int, ...]
    dmem: tuple[int, ...]
    halted: bool = False

    def reg(self, idx: int) -> int:
        return 0 if idx == 0 else self.regs[idx]


@dataclass(frozen=True)
class TraceRecord:
    """What one executed cycle exposes on the debug ports."""

    pc: int
    word: int
    alu_result: int
    reg_write_data: int


def reset(cfg: IsaConfig = IsaConfig()) -> ArchState:
    """Power-on state: pc 0, all registers and data memory zero."""
    return ArchState(pc=0, regs=(0,) * cfg.num_regs, dmem=(0,) * cfg.mem_size, halted=False)


def _write_reg(regs: tuple[int, ...], idx: int, value: int) -> tuple[int, ...]:
    if idx == 0:
        return regs  # register zero is hardwired; writes are discarded
    return regs[:idx] + (value,) + regs[idx + 1:]


def step(state: ArchState, imem: MemImage, cfg: IsaConfig = IsaConfig()) -> tuple[ArchState, TraceRecord]:
    """Execute one instruction, returning the next state and its trace record."""
    if state.halted:
        raise FetchError("cannot step a halted state")
    word = imem.word_at(state.pc, cfg)
    instr = decode(word, cfg)
    m = instr.mnemonic
    dmask, amask = cfg.data_mask, cfg.addr_mask
    next_pc = (state.pc + cfg.pc_increment) & amask
    regs = state.regs
    dmem = state.dmem
    halted = False
    alu = 0
    wb = 0

    if m is Mnemonic.NOP:
        pass
    elif m is Mnemonic.HALT:
        halted = True
        next_pc = state.pc  # state freezes at the halting instruction
    elif m in R_FORMAT:
        a, b = state.reg(instr.rn), state.reg(instr.rm)
        if m is Mnemonic.ADD:
            alu = (a + b) & dmask
        elif m is Mnemonic.SUB:
            alu = (a - b) & dmask
        elif m is Mnemonic.AND:
            alu = a & b
        else:
            alu = a | b
        wb = alu
        regs = _write_reg(regs, instr.rd, wb)
    elif m in I_FORMAT:
        a = state.reg(instr.rn)
        if m is Mnemonic.ADDI:
            alu = (a + instr.imm) & dmask
        else:
            alu = (a - instr.imm) & dmask
        wb = alu
        regs = _write_reg(regs, instr.rd, wb)
    elif m is Mnemonic.LDUR:
        addr = (state.reg(instr.rn) + instr.imm) & amask
        alu = addr & dmask
        wb = dmem[addr]
        regs = _write_reg(regs, instr.rd, wb)
    elif m is Mnemonic.STUR:
        addr = (state.reg(instr.rn) + instr.imm) & amask
        alu = addr & dmask
        dmem = dmem[:addr] + (state.reg(instr.rd),) + dmem[addr + 1:]
    elif m is Mnemonic.CBZ:
        tested = state.reg(instr.rd)
        alu = tested  # the datapath passes the tested register through the ALU
        if tested == 0:
            next_pc = (state.pc + instr.imm * cfg.pc_increment) & amask
    elif m is Mnemonic.B:
        next_pc = instr.imm & amask

    record = TraceRecord(pc=state.pc, word=word, alu_result=alu & dmask, reg_write_data=wb & dmask)
    new_state = ArchState(pc=next_pc, regs=regs, dmem=dmem, halted=halted)
    return new_state, record


def run(
    imem: MemImage,
    max_cycles: int,
    cfg: IsaConfig = IsaConfig(),
) -> tuple[ArchState, list[TraceRecord]]:
    """Step from reset until HALT or the cycle bound; errors carry the cycle index."""
    state = reset(cfg)
    records: list[TraceRecord] = []
    for cycle in range(max_cycles):
        if state.halted:
            break
        try:
            state, record = step(state, imem, cfg)
        except (FetchError, DecodeError) as exc:
            raise SimulationError(cycle, exc) from exc
        records.append(record)
    return state, records


# --- hex memory images -------------------------------------------------------

def load_hex(text: str, cfg: IsaConfig = IsaConfig()) -> MemImage:
    """Parse a hex image: one instruction word per line, ``//`` comments allowed."""
    digits = cfg.hex_digits
    words: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        if len(line) != digits:
            raise HexError(lineno, f"expected {digits} hex digits, got {len(line)}")
        try:
            words.append(int(line, 16))
        except ValueError:
            raise HexError(lineno, f"not hexadecimal: {line!r}") from None
    return MemImage(words=tuple(words))


def emit_hex(img: MemImage, cfg: IsaConfig = IsaConfig()) -> str:
    """Uppercase, zero-padded, newline-terminated hex lines."""
    digits = cfg.hex_digits
    return "".join(f"{w:0{digits}X}\n" for w in img.words)


# --- shared ISA table ---------------------------------------------------------

_SEMANTICS = {
    Mnemonic.NOP: "no effect; pc advances",
    Mnemonic.ADD: "rd = rn + rm",
    Mnemonic.SUB: "rd = rn - rm",
    Mnemonic.AND: "rd = rn & rm",
    Mnemonic.ORR: "rd = rn | rm",
    Mnemonic.ADDI: "rd = rn + signext(imm)",
    Mnemonic.SUBI: "rd = rn - signext(imm)",
    Mnemonic.LDUR: "rt = dmem[rn + signext(imm)]",
    Mnemonic.STUR: "dmem[rn + signext(imm)] = rt",
    Mnemonic.CBZ: "if rt == 0: pc += signext(imm) * PC_INCREMENT_VAL",
    Mnemonic.B: "pc = addr12 truncated to the address width",
    Mnemonic.HALT: "set halted; state freezes",
}


def isa_table(cfg: IsaConfig = IsaConfig()) -> dict:
    """JSON-ready ISA description consumed by generation prompts and docs."""
    iw, ow, rw = cfg.instruction_width, cfg.opcode_width, cfg.reg_addr_width
    op_hi, op_lo = iw - 1, iw - ow
    rd_hi, rd_lo = op_lo - 1, op_lo - rw
    rn_hi, rn_lo = rd_lo - 1, rd_lo - rw
    rm_hi, rm_lo = rn_lo - 1, rn_lo - rw

    def fields(fmt: str) -> dict:
        out = {"opcode": [op_hi, op_lo]}
        if fmt == "R":
            out.update(rd=[rd_hi, rd_lo], rn=[rn_hi, rn_lo], rm=[rm_hi, rm_lo])
        elif fmt in ("I", "D"):
            out.update(rd=[rd_hi, rd_lo], rn=[rn_hi, rn_lo], imm=[cfg.immediate_width - 1, 0])
        elif fmt == "CB":
            out.update(rt=[rd_hi, rd_lo], imm=[cfg.immediate_width - 1, 0])
        elif fmt == "B":
            out.update(addr=[cfg.jump_addr_width - 1, 0])
        return out

    instructions = []
    for mnemonic, opcode in OPCODES.items():
        fmt = instruction_format(mnemonic)
        instructions.append(
            {
                "mnemonic": mnemonic.value,
                "opcode": opcode,
                "format": fmt,
                "fields": fields(fmt),
                "semantics": _SEMANTICS[mnemonic],
            }
        )
    return {
        "schema_version": 1,
        "parameters": {
            "DATA_WIDTH": cfg.data_width,
            "ADDRESS_WIDTH": cfg.address_width,
            "INSTRUCTION_WIDTH": cfg.instruction_width,
            "REG_ADDR_WIDTH": cfg.reg_addr_width,
            "OPCODE_WIDTH": cfg.opcode_width,
            "ALU_OP_WIDTH": cfg.alu_op_width,
            "IMMEDIATE_WIDTH": cfg.immediate_width,
            "JUMP_ADDR_WIDTH": cfg.jump_addr_width,
            "PC_INCREMENT_VAL": cfg.pc_increment,
        },
        "illegal_opcodes": sorted(
            op for op in range(1 << cfg.opcode_width) if op not in MNEMONIC_BY_OPCODE
        ),
        "instructions": instructions,
    }


def format_instruction(instr: Instruction) -> str:
    """Render a decoded instruction for human-facing reports."""
    m = instr.mnemonic
    fmt = instruction_format(m)
    if fmt == "R":
        return f"{m.value} r{instr.rd}, r{instr.rn}, r{instr.rm}"
    if fmt in ("I", "D"):
        return f"{m.value} r{instr.rd}, r{instr.rn}, #{instr.imm}"
    if fmt == "CB":
        return f"{m.value} r{instr.rd}, #{instr.imm:+d}"
    if fmt == "B":
        return f"{m.value} {instr.imm:#05x}"
    return m.value
