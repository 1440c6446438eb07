"""Register-transfer IR: operand and operation model, text form, validation.

Two isomorphic encodings exist for a lifted block: the RTL operation list
defined here (the unit of execution and caching) and the SSA expression form
built by the optimizer (`vxe.optimizer`).  This module owns the data types,
the canonical text serialization used by the block cache, and block
validation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

# ---------------------------------------------------------------------------
# Address spaces and varnodes
# ---------------------------------------------------------------------------

SPACE_KINDS = ("ram", "register", "temporary", "constant")

# Default single-letter operand prefixes per space kind; a spec may override.
DEFAULT_LETTERS = {"ram": "m", "register": "r", "temporary": "u"}

VALID_SIZES = (1, 2, 4, 8)


@dataclass(frozen=True)
class AddressSpace:
    """A flat byte-addressed storage space; VarNodes index into one."""

    id: int
    name: str
    kind: str
    word_size_bytes: int = 1
    extent_bytes: int = 0  # ignored for the constant space
    letter: str = ""

    def __post_init__(self):
        if self.kind not in SPACE_KINDS:
            raise ValueError(f"bad space kind: {self.kind}")


class SpaceMap:
    """Lookup table over the address spaces of one processor spec."""

    def __init__(self, spaces: Iterable[AddressSpace]):
        self._list = list(spaces)
        self.by_id = {s.id: s for s in self._list}
        self.by_name = {s.name: s for s in self._list}
        self.by_letter = {s.letter: s for s in self._list if s.letter}
        if len(self.by_id) != len(self._list):
            raise ValueError("duplicate space ids")
        if len(self.by_name) != len(self._list):
            raise ValueError("duplicate space names")
        temps = [s for s in self._list if s.kind == "temporary"]
        if len(temps) != 1:
            raise ValueError("exactly one temporary space required")
        consts = [s for s in self._list if s.kind == "constant"]
        if len(consts) != 1:
            raise ValueError("exactly one constant space required")
        self.temp = temps[0]
        self.const = consts[0]

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)


def _spaces_of(spec_or_spaces) -> SpaceMap:
    spaces = getattr(spec_or_spaces, "spaces", spec_or_spaces)
    if not isinstance(spaces, SpaceMap):
        raise TypeError("expected a ProcessorSpec or SpaceMap")
    return spaces


@dataclass(frozen=True, order=True)
class VarNode:
    """A (space, offset, size) triple naming a storage cell.

    For the constant space the offset *is* the value.
    """

    space: int
    offset: int
    size: int

    def overlaps(self, other: "VarNode") -> bool:
        return (self.space == other.space
                and self.offset < other.offset + other.size
                and other.offset < self.offset + self.size)

    def covers(self, other: "VarNode") -> bool:
        return (self.space == other.space
                and self.offset <= other.offset
                and self.offset + self.size >= other.offset + other.size)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

OPCODES = frozenset({
    "COPY", "LOAD", "STORE",
    "BRANCH", "CBRANCH", "IBRANCH", "CALL", "ICALL", "RETURN",
    "INT_ADD", "INT_SUB", "INT_MUL", "INT_AND", "INT_OR", "INT_XOR",
    "INT_LEFT", "INT_RIGHT", "INT_SRIGHT",
    "INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS", "INT_CARRY",
    "INT_ZEXT", "INT_SEXT", "TRUNC", "BOOL_NOT",
    "INTRINSIC", "HALT",
})

BINARY_SAME_WIDTH = frozenset({
    "INT_ADD", "INT_SUB", "INT_MUL", "INT_AND", "INT_OR", "INT_XOR",
    "INT_LEFT", "INT_RIGHT", "INT_SRIGHT",
})
COMPARISONS = frozenset({
    "INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS", "INT_CARRY",
})
RESIZES = frozenset({"INT_ZEXT", "INT_SEXT", "TRUNC"})

# Ops that transfer control between architectural instructions (or stop).
# BRANCH/CBRANCH count only when their target is outside the constant space.
CONTROL_OPS = frozenset({
    "BRANCH", "CBRANCH", "IBRANCH", "CALL", "ICALL", "RETURN", "HALT",
})

# Ops with externally visible effects that must never be removed.
EFFECT_OPS = CONTROL_OPS | {"STORE", "INTRINSIC"}


@dataclass(frozen=True)
class Operation:
    """One RTL instruction: opcode, input varnodes, optional output."""

    opcode: str
    inputs: tuple[VarNode, ...] = ()
    output: Optional[VarNode] = None
    intrinsic_name: Optional[str] = None

    def is_control(self, spaces: SpaceMap) -> bool:
        """True if this op may transfer control to another instruction."""
        if self.opcode in ("IBRANCH", "CALL", "ICALL", "RETURN", "HALT"):
            return True
        if self.opcode in ("BRANCH", "CBRANCH"):
            return spaces.by_id[self.inputs[0].space].kind != "constant"
        return False


def check_operation(op: Operation, spaces: SpaceMap) -> list[str]:
    """Return every structural problem with one operation (empty = ok)."""
    problems = []
    if op.opcode not in OPCODES:
        return [f"unknown opcode {op.opcode!r}"]

    def expect_inputs(n):
        if len(op.inputs) != n:
            problems.append(
                f"{op.opcode} needs {n} input(s), has {len(op.inputs)}")
            return False
        return True

    def expect_output(want):
        if want and op.output is None:
            problems.append(f"{op.opcode} needs an output")
            return False
        if not want and op.output is not None:
            problems.append(f"{op.opcode} must not have an output")
            return False
        return want

    for vn in op.inputs + ((op.output,) if op.output else ()):
        space = spaces.by_id.get(vn.space)
        if space is None:
            problems.append(f"unknown space id {vn.space}")
            continue
        if vn.size not in VALID_SIZES:
            problems.append(f"invalid size {vn.size} in {space.name} operand")
        if space.kind != "constant":
            if vn.offset < 0 or vn.offset + vn.size > space.extent_bytes:
                problems.append(
                    f"operand outside {space.name} space: "
                    f"offset {vn.offset:#x} size {vn.size}")
    if problems:
        return problems

    opc = op.opcode
    if opc == "COPY":
        if expect_inputs(1) and expect_output(True):
            if op.inputs[0].size != op.output.size:
                problems.append("COPY sizes differ")
    elif opc in BINARY_SAME_WIDTH:
        if expect_inputs(2) and expect_output(True):
            a, b = op.inputs
            if a.size != b.size:
                problems.append(f"{opc} inputs of unequal size")
            if op.output.size != a.size:
                problems.append(f"{opc} output size must match inputs")
    elif opc in COMPARISONS:
        if expect_inputs(2) and expect_output(True):
            a, b = op.inputs
            if a.size != b.size:
                problems.append(f"{opc} inputs of unequal size")
            if op.output.size != 1:
                problems.append(f"{opc} output must have size 1")
    elif opc in ("INT_ZEXT", "INT_SEXT"):
        if expect_inputs(1) and expect_output(True):
            if op.output.size <= op.inputs[0].size:
                problems.append(f"{opc} output must be wider than input")
    elif opc == "TRUNC":
        if expect_inputs(1) and expect_output(True):
            if op.output.size >= op.inputs[0].size:
                problems.append("TRUNC output must be narrower than input")
    elif opc == "BOOL_NOT":
        if expect_inputs(1) and expect_output(True):
            if op.inputs[0].size != 1 or op.output.size != 1:
                problems.append("BOOL_NOT works on size-1 operands")
    elif opc == "LOAD":
        if expect_inputs(2) and expect_output(True):
            sid, _addr = op.inputs
            if spaces.by_id[sid.space].kind != "constant":
                problems.append("LOAD input 0 must be a space-id constant")
            elif sid.offset not in spaces.by_id:
                problems.append(f"LOAD names unknown space id {sid.offset}")
    elif opc == "STORE":
        if expect_inputs(3):
            expect_output(False)
            sid = op.inputs[0]
            if spaces.by_id[sid.space].kind != "constant":
                problems.append("STORE input 0 must be a space-id constant")
            elif sid.offset not in spaces.by_id:
                problems.append(f"STORE names unknown space id {sid.offset}")
    elif opc == "BRANCH":
        expect_inputs(1)
        expect_output(False)
    elif opc == "CBRANCH":
        if expect_inputs(2):
            expect_output(False)
            if op.inputs[1].size != 1:
                problems.append("condition must be size 1")
    elif opc in ("IBRANCH", "RETURN", "ICALL", "CALL"):
        expect_inputs(1)
        expect_output(False)
    elif opc == "HALT":
        expect_inputs(0)
        expect_output(False)
    elif opc == "INTRINSIC":
        if not op.intrinsic_name:
            problems.append("INTRINSIC needs a name")
    if opc != "INTRINSIC" and op.intrinsic_name:
        problems.append(f"{opc} must not carry an intrinsic name")
    return problems


# ---------------------------------------------------------------------------
# Instructions and blocks
# ---------------------------------------------------------------------------

TERMINATOR_KINDS = ("branch", "cbranch", "call", "return", "indirect",
                    "halt", "fallthrough")


@dataclass(frozen=True)
class LiftedInstruction:
    address: int
    length_bytes: int
    asm_text: str
    ops: tuple[Operation, ...]


def derive_terminator(instructions: tuple[LiftedInstruction, ...],
                      spaces: SpaceMap) -> str:
    if not instructions:
        return "fallthrough"
    for op in instructions[-1].ops:
        if not op.is_control(spaces):
            continue
        return {
            "BRANCH": "branch", "CBRANCH": "cbranch",
            "CALL": "call", "ICALL": "call",
            "RETURN": "return", "IBRANCH": "indirect", "HALT": "halt",
        }[op.opcode]
    return "fallthrough"


@dataclass(frozen=True)
class IRBlock:
    """A run of instructions ending at the first inter-instruction transfer.

    Because instructions may contain internal control flow, a block is a
    sequence of instruction-scoped flow graphs rather than a strict basic
    block.
    """

    start_address: int
    instructions: tuple[LiftedInstruction, ...]
    terminator_kind: str
    diagnostics: tuple[str, ...] = ()

    @classmethod
    def build(cls, start_address, instructions, spaces, diagnostics=()):
        instructions = tuple(instructions)
        return cls(start_address, instructions,
                   derive_terminator(instructions, spaces),
                   tuple(diagnostics))


def count_ops(block: IRBlock) -> int:
    """Total IL operations across all instructions of the block."""
    return sum(len(insn.ops) for insn in block.instructions)


# ---------------------------------------------------------------------------
# SSA expression form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """A node of the SSA expression encoding.

    op is "const", "ref", or an IR opcode.  `ref` holds an opaque key naming
    a versioned storage class (the optimizer uses (overlap-class, version)).
    `tag` carries extra identity for nodes that are not pure functions of
    their children, e.g. (space-id, memory-epoch) on LOAD.
    """

    op: str
    size: int
    args: tuple["Expr", ...] = ()
    value: Optional[int] = None
    ref: object = None
    tag: object = None

    @classmethod
    def const(cls, value: int, size: int) -> "Expr":
        return cls("const", size, value=value & ((1 << (8 * size)) - 1))

    @classmethod
    def make_ref(cls, key: object, size: int) -> "Expr":
        return cls("ref", size, ref=key)


@dataclass(frozen=True)
class SSAStatement:
    """One statement of the SSA form.

    Assignments name a (storage class, version) target; effect statements
    (stores, branches, intrinsics, halt) have target None and keep their
    operand expressions in `expr` children.
    """

    kind: str                       # "assign" or an effect opcode
    expr: Expr
    target: object = None           # (class, version) for assignments
    target_member: Optional[VarNode] = None  # varnode actually written
    intrinsic_name: Optional[str] = None
    barrier: bool = False           # opaque: never rewritten or removed


# ---------------------------------------------------------------------------
# Canonical text rendering
# ---------------------------------------------------------------------------

def render_varnode(vn: VarNode, spaces: SpaceMap) -> str:
    space = spaces.by_id[vn.space]
    if space.kind == "constant":
        return f"#0x{vn.offset:x}:{vn.size}"
    return f"{space.letter}[0x{vn.offset:x}:{vn.size}]"


def render_op(op: Operation, spec_or_spaces) -> str:
    """Deterministic single-line rendering of one operation."""
    spaces = _spaces_of(spec_or_spaces)
    parts = []
    if op.output is not None:
        parts.append(f"{render_varnode(op.output, spaces)} = ")
    parts.append(op.opcode)
    operands = []
    if op.opcode == "INTRINSIC":
        operands.append(f'"{op.intrinsic_name}"')
        operands.extend(render_varnode(v, spaces) for v in op.inputs)
    elif op.opcode in ("LOAD", "STORE"):
        operands.append(spaces.by_id[op.inputs[0].offset].name)
        operands.extend(render_varnode(v, spaces) for v in op.inputs[1:])
    else:
        operands.extend(render_varnode(v, spaces) for v in op.inputs)
    if operands:
        parts.append(" " + ", ".join(operands))
    return "".join(parts)


def render_block(block: IRBlock, spec) -> str:
    """Canonical text for a block; bit-exact format used by the cache."""
    spaces = _spaces_of(spec)
    name = getattr(spec, "name", "unknown")
    lines = [f"block 0x{block.start_address:x} {name} v1"]
    for insn in block.instructions:
        asm = insn.asm_text.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'insn 0x{insn.address:x} {insn.length_bytes} "{asm}"')
        for op in insn.ops:
            lines.append("  " + render_op(op, spaces))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Canonical text parsing
# ---------------------------------------------------------------------------

class IrSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


_VARNODE_RE = re.compile(r"([a-z])\[0x([0-9a-f]+):(\d+)\]")
_CONST_RE = re.compile(r"#0x([0-9a-f]+):(\d+)")
_INSN_RE = re.compile(r'insn 0x([0-9a-f]+) (\d+) "((?:[^"\\]|\\.)*)"')
_BLOCK_RE = re.compile(r"block 0x([0-9a-f]+) (\S+) v1")


def _parse_operand(text: str, spaces: SpaceMap, lineno: int) -> VarNode:
    text = text.strip()
    m = _CONST_RE.fullmatch(text)
    if m:
        return VarNode(spaces.const.id, int(m.group(1), 16), int(m.group(2)))
    m = _VARNODE_RE.fullmatch(text)
    if m:
        space = spaces.by_letter.get(m.group(1))
        if space is None:
            raise IrSyntaxError(f"unknown space letter {m.group(1)!r}", lineno)
        return VarNode(space.id, int(m.group(2), 16), int(m.group(3)))
    raise IrSyntaxError(f"bad operand {text!r}", lineno)


def parse_op(text: str, spaces: SpaceMap, lineno: int = 1) -> Operation:
    body = text.strip()
    output = None
    if " = " in body:
        out_text, body = body.split(" = ", 1)
        output = _parse_operand(out_text, spaces, lineno)
    fields = body.split(None, 1)
    opcode = fields[0]
    if opcode not in OPCODES:
        raise IrSyntaxError(f"unknown opcode {opcode!r}", lineno)
    rest = fields[1] if len(fields) > 1 else ""
    operand_texts = [t.strip() for t in rest.split(",")] if rest else []

    intrinsic_name = None
    inputs: list[VarNode] = []
    if opcode == "INTRINSIC":
        if not operand_texts or not operand_texts[0].startswith('"'):
            raise IrSyntaxError("INTRINSIC needs a quoted name", lineno)
        intrinsic_name = operand_texts[0].strip('"')
        operand_texts = operand_texts[1:]
    elif opcode in ("LOAD", "STORE"):
        if not operand_texts:
            raise IrSyntaxError(f"{opcode} needs a space name", lineno)
        space = spaces.by_name.get(operand_texts[0])
        if space is None:
            raise IrSyntaxError(f"unknown space {operand_texts[0]!r}", lineno)
        inputs.append(VarNode(spaces.const.id, space.id, 4))
        operand_texts = operand_texts[1:]
    inputs.extend(_parse_operand(t, spaces, lineno) for t in operand_texts)

    op = Operation(opcode, tuple(inputs), output, intrinsic_name)
    problems = check_operation(op, spaces)
    if problems:
        raise IrSyntaxError("; ".join(problems), lineno)
    return op


def parse_ir(text: str, spec) -> IRBlock:
    """Parse canonical block text; inverse of render_block on its image."""
    spaces = _spaces_of(spec)
    lines = text.splitlines()
    if not lines:
        raise IrSyntaxError("no block header", 1)
    m = _BLOCK_RE.fullmatch(lines[0].strip())
    if not m:
        raise IrSyntaxError("no block header", 1)
    start = int(m.group(1), 16)
    arch = m.group(2)
    spec_name = getattr(spec, "name", arch)
    if arch != spec_name:
        raise IrSyntaxError(
            f"block is for arch {arch!r}, spec is {spec_name!r}", 1)

    instructions: list[LiftedInstruction] = []
    cur: Optional[dict] = None

    def finish():
        if cur is None:
            return
        if not cur["ops"]:
            raise IrSyntaxError("instruction with empty op list",
                                cur["lineno"])
        instructions.append(LiftedInstruction(
            cur["address"], cur["length"], cur["asm"], tuple(cur["ops"])))

    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        if raw.startswith("insn "):
            m = _INSN_RE.fullmatch(raw.strip())
            if m is None:
                raise IrSyntaxError("bad insn line", idx)
            finish()
            asm = m.group(3).replace('\\"', '"').replace("\\\\", "\\")
            cur = {"address": int(m.group(1), 16), "length": int(m.group(2)),
                   "asm": asm, "ops": [], "lineno": idx}
        elif raw.startswith("  "):
            if cur is None:
                raise IrSyntaxError("op line before any insn line", idx)
            cur["ops"].append(parse_op(raw, spaces, idx))
        else:
            raise IrSyntaxError(f"unexpected line {raw!r}", idx)
    finish()
    return IRBlock.build(start, instructions, spaces)


# ---------------------------------------------------------------------------
# Block validation
# ---------------------------------------------------------------------------

def validate_block(block: IRBlock, spec) -> list[str]:
    """Check every type invariant; returns all violations, not just the first."""
    spaces = _spaces_of(spec)
    diags: list[str] = []
    for insn_index, insn in enumerate(block.instructions):
        where = f"insn 0x{insn.address:x}"
        if not insn.ops:
            diags.append(f"{where}: empty op list")
        if insn.length_bytes <= 0:
            diags.append(f"{where}: non-positive length")
        has_control = False
        for op_index, op in enumerate(insn.ops):
            for problem in check_operation(op, spaces):
                diags.append(f"{where} op {op_index}: {problem}")
            if op.opcode in ("BRANCH", "CBRANCH") and op.inputs:
                target = op.inputs[0]
                if spaces.by_id[target.space].kind == "constant":
                    if not (0 <= target.offset < len(insn.ops)):
                        diags.append(
                            f"{where} op {op_index}: intra-instruction "
                            f"target {target.offset} outside op list")
            if op.is_control(spaces):
                has_control = True
        if has_control and insn_index != len(block.instructions) - 1:
            diags.append(f"{where}: terminator not last")
    expected = derive_terminator(block.instructions, spaces)
    if block.terminator_kind != expected:
        diags.append(f"terminator kind {block.terminator_kind!r} does not "
                     f"match ops (expected {expected!r})")
    return diags
