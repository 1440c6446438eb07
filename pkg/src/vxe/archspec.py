"""Declarative processor specifications: parsing, decoding, lifting.

A spec file is line-oriented:

    arch <name> <version>
    endian <little|big>
    space <name> kind=<ram|register|temporary> size=0x<hex> [wordsize=<n>]
        [letter=<c>] [default]
    reg <NAME> offset=0x<hex> size=<n> [pc]
    insn <MNEMONIC> bits=<n> match="<bits>" asm="<template>"
        [names="<letter>=<field>,..."] {
        <semantic statements>
    }

Match strings read MSB-first; '0'/'1' are fixed bits, '.' is ignored, and a
run of the same letter extracts an operand field.  Semantic statements form a
small RTL template language; see the bundled specs for the idiom.  The
constant space is implicit.

Lifting is a pure function of (spec, bytes, address); optimized blocks are
memoized through `vxe.cache.LiftCache`.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

from .ir import (AddressSpace, IRBlock, LiftedInstruction, Operation,
                 SpaceMap, VarNode, VALID_SIZES, DEFAULT_LETTERS)


class SpecError(ValueError):
    def __init__(self, message, lineno=None):
        where = f"line {lineno}: " if lineno else ""
        super().__init__(where + message)
        self.lineno = lineno


class DecodeError(ValueError):
    def __init__(self, address, data):
        shown = " ".join(f"{b:02x}" for b in data[:8])
        super().__init__(f"no pattern matches at 0x{address:x}: {shown}")
        self.address = address
        self.data = bytes(data)


# ---------------------------------------------------------------------------
# Semantic template AST
# ---------------------------------------------------------------------------

@dataclass
class TExpr:
    """Template expression node.

    kind: int | field | reg | regidx | tmp | load | op
    """
    kind: str
    size: Optional[int] = None
    value: Optional[int] = None          # int
    name: Optional[str] = None           # field/reg/tmp name, op opcode
    bank: Optional[str] = None           # regidx bank prefix
    space: Optional[str] = None          # load space name
    args: tuple = ()


@dataclass
class TStmt:
    kind: str                            # assign/store/branch/goto/cbranch/
                                         # call/return/intrinsic/label/halt
    dst: Optional[TExpr] = None
    expr: Optional[TExpr] = None
    space: Optional[str] = None
    size: Optional[int] = None
    addr: Optional[TExpr] = None
    label: Optional[str] = None
    target: Optional[TExpr] = None
    cond: Optional[TExpr] = None
    name: Optional[str] = None
    args: tuple = ()


@dataclass
class SemanticTemplate:
    statements: list[TStmt]
    tmp_sizes: dict[str, int]
    labels: set[str]


@dataclass
class InstructionPattern:
    mnemonic: str
    total_bits: int
    fixed_mask: int
    fixed_value: int
    fields: list[tuple[str, int, int]]   # (name, msb, lsb)
    asm_template: str
    semantics: SemanticTemplate
    lineno: int = 0

    @property
    def length_bytes(self) -> int:
        return self.total_bits // 8


@dataclass
class ProcessorSpec:
    name: str
    version: str
    spaces: SpaceMap
    registers: dict[str, VarNode]        # insertion-ordered
    endianness: str                      # data memory byte order
    patterns: list[InstructionPattern]
    content_hash: str
    pc_register: str
    instruction_width: int               # bytes; fixed-width ISAs only

    @property
    def register_space(self) -> AddressSpace:
        return next(s for s in self.spaces if s.kind == "register")

    @property
    def ram_space(self) -> AddressSpace:
        return next(s for s in self.spaces if s.kind == "ram")

    @property
    def address_size(self) -> int:
        extent = self.ram_space.extent_bytes
        for size in VALID_SIZES:
            if extent <= (1 << (8 * size)):
                return size
        return 8

    @property
    def pc(self) -> VarNode:
        return self.registers[self.pc_register]

    def register_overlaps(self) -> list[tuple[str, str]]:
        """Pairs of distinct register names with intersecting storage."""
        items = list(self.registers.items())
        out = []
        for i, (name_a, a) in enumerate(items):
            for name_b, b in items[i + 1:]:
                if a.overlaps(b):
                    out.append((name_a, name_b))
        return out


# ---------------------------------------------------------------------------
# Expression / statement parsing for semantic templates
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<hex>0x[0-9a-fA-F]+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<str>"[^"]*")
  | (?P<op><<|>>|==|!=|[=()\[\]:,!+\-*&^|<])
  | (?P<ws>\s+)
""", re.VERBOSE)

_FUNCTIONS = {"zext": "INT_ZEXT", "sext": "INT_SEXT", "trunc": "TRUNC",
              "carry": "INT_CARRY", "sright": "INT_SRIGHT",
              "sless": "INT_SLESS"}

_BINOPS = [  # precedence levels, loosest first
    [("==", "INT_EQUAL"), ("!=", "INT_NOTEQUAL"), ("<", "INT_LESS")],
    [("|", "INT_OR")],
    [("^", "INT_XOR")],
    [("&", "INT_AND")],
    [("<<", "INT_LEFT"), (">>", "INT_RIGHT")],
    [("+", "INT_ADD"), ("-", "INT_SUB")],
    [("*", "INT_MUL")],
]


class _ExprParser:
    def __init__(self, text, lineno, spec_ctx):
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise SpecError(f"bad token at {text[pos:]!r}", lineno)
            pos = m.end()
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, m.group()))
        self.i = 0
        self.lineno = lineno
        self.ctx = spec_ctx  # dict with space_names, reg_names, fields, tmps

    def peek(self, k=0):
        if self.i + k < len(self.tokens):
            return self.tokens[self.i + k]
        return (None, None)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, tok = self.next()
        if tok != value:
            raise SpecError(f"expected {value!r}, found {tok!r}", self.lineno)

    def at_end(self):
        return self.i >= len(self.tokens)

    def parse_expr(self, level=0) -> TExpr:
        if level == len(_BINOPS):
            return self.parse_primary()
        node = self.parse_expr(level + 1)
        while True:
            kind, tok = self.peek()
            opcode = None
            for sym, opc in _BINOPS[level]:
                if tok == sym:
                    opcode = opc
                    break
            if opcode is None:
                return node
            self.next()
            rhs = self.parse_expr(level + 1)
            node = TExpr("op", name=opcode, args=(node, rhs))

    def _maybe_size_suffix(self, node: TExpr) -> TExpr:
        if self.peek()[1] == ":":
            self.next()
            kind, tok = self.next()
            if kind not in ("int", "hex"):
                raise SpecError("expected size after ':'", self.lineno)
            node.size = int(tok, 0)
        return node

    def parse_primary(self) -> TExpr:
        kind, tok = self.next()
        if tok == "(":
            node = self.parse_expr()
            self.expect(")")
            return self._maybe_size_suffix(node)
        if tok == "!":
            arg = self.parse_primary()
            return TExpr("op", name="BOOL_NOT", args=(arg,))
        if kind in ("int", "hex"):
            return self._maybe_size_suffix(TExpr("int", value=int(tok, 0)))
        if kind == "ident":
            if tok in _FUNCTIONS and self.peek()[1] == "(":
                return self._parse_function(tok)
            if tok in self.ctx["space_names"] and self.peek()[1] == "[":
                self.next()
                addr = self.parse_expr()
                self.expect("]")
                node = TExpr("load", space=tok, args=(addr,))
                node = self._maybe_size_suffix(node)
                if node.size is None:
                    raise SpecError("load needs an explicit :size",
                                    self.lineno)
                return node
            if self.peek()[1] == "[":
                self.next()
                fkind, ftok = self.next()
                if fkind != "ident" or ftok not in self.ctx["fields"]:
                    raise SpecError(f"unknown field {ftok!r} in {tok}[...]",
                                    self.lineno)
                self.expect("]")
                return TExpr("regidx", bank=tok, name=ftok,
                             size=self.ctx["bank_size"].get(tok))
            if tok in self.ctx["reg_names"]:
                return TExpr("reg", name=tok,
                             size=self.ctx["reg_names"][tok].size)
            if tok in self.ctx["tmps"]:
                return TExpr("tmp", name=tok, size=self.ctx["tmps"][tok])
            if tok in self.ctx["fields"]:
                return self._maybe_size_suffix(TExpr("field", name=tok))
            raise SpecError(f"unknown name {tok!r}", self.lineno)
        raise SpecError(f"unexpected token {tok!r}", self.lineno)

    def _parse_function(self, fname) -> TExpr:
        opcode = _FUNCTIONS[fname]
        self.expect("(")
        first = self.parse_expr()
        if fname in ("zext", "sext", "trunc"):
            self.expect(",")
            kind, tok = self.next()
            if kind not in ("int", "hex"):
                raise SpecError(f"{fname} needs a literal size", self.lineno)
            self.expect(")")
            return TExpr("op", name=opcode, args=(first,), size=int(tok, 0))
        self.expect(",")
        second = self.parse_expr()
        self.expect(")")
        return TExpr("op", name=opcode, args=(first, second))


def _infer_sizes(expr: TExpr, expected: Optional[int], lineno) -> int:
    """Resolve operand sizes bottom-up with bidirectional inference."""
    if expr.kind in ("reg", "tmp", "load"):
        if expected is not None and expr.size != expected:
            raise SpecError(
                f"size mismatch: have {expr.size}, need {expected}", lineno)
        return expr.size
    if expr.kind in ("int", "field"):
        if expr.size is None:
            if expected is None:
                raise SpecError("cannot infer constant size; add :n", lineno)
            expr.size = expected
        elif expected is not None and expr.size != expected:
            raise SpecError(
                f"size mismatch: have {expr.size}, need {expected}", lineno)
        return expr.size
    if expr.kind == "regidx":
        # Banked registers share one size, learned from the bank's members.
        if expr.size is None:
            expr.size = expected
        elif expected is not None and expr.size != expected:
            raise SpecError(
                f"size mismatch: have {expr.size}, need {expected}", lineno)
        return expr.size
    assert expr.kind == "op"
    opc = expr.name
    if opc in ("INT_ZEXT", "INT_SEXT", "TRUNC"):
        _infer_sizes(expr.args[0], None, lineno)
        if expr.args[0].size is None:
            raise SpecError(f"{opc} input size unknown; add :n", lineno)
        if expected is not None and expr.size != expected:
            raise SpecError(
                f"size mismatch: have {expr.size}, need {expected}", lineno)
        return expr.size
    if opc in ("INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS",
               "INT_CARRY"):
        expr.size = 1
        if expected is not None and expected != 1:
            raise SpecError("comparison result has size 1", lineno)
        a, b = expr.args
        size = _try_infer(a, lineno) or _try_infer(b, lineno)
        if size is None:
            raise SpecError("cannot infer comparison operand size", lineno)
        _infer_sizes(a, size, lineno)
        _infer_sizes(b, size, lineno)
        return 1
    if opc == "BOOL_NOT":
        _infer_sizes(expr.args[0], 1, lineno)
        expr.size = 1
        if expected is not None and expected != 1:
            raise SpecError("BOOL_NOT result has size 1", lineno)
        return 1
    # same-width binary
    a, b = expr.args
    size = expected or _try_infer(a, lineno) or _try_infer(b, lineno)
    if size is None:
        raise SpecError(f"cannot infer size of {opc}", lineno)
    _infer_sizes(a, size, lineno)
    _infer_sizes(b, size, lineno)
    expr.size = size
    return size


def _try_infer(expr: TExpr, lineno) -> Optional[int]:
    if expr.kind in ("reg", "tmp", "load"):
        return expr.size
    if expr.kind in ("int", "field", "regidx"):
        return expr.size
    if expr.name in ("INT_ZEXT", "INT_SEXT", "TRUNC"):
        return expr.size
    if expr.name in ("INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS",
                     "INT_CARRY", "BOOL_NOT"):
        return 1
    for a in expr.args:
        size = _try_infer(a, lineno)
        if size is not None:
            return size
    return None


def _parse_statement(line: str, lineno: int, ctx: dict) -> TStmt:
    text = line.strip()
    first = text.split(None, 1)[0] if text else ""

    if first == "local":
        name = text[len("local"):].strip().rstrip(":").strip()
        if not name.isidentifier():
            raise SpecError(f"bad label {name!r}", lineno)
        return TStmt("label", label=name)
    if first == "goto":
        name = text[len("goto"):].strip()
        if name not in ctx["labels"]:
            raise SpecError(f"unknown label {name!r}", lineno)
        return TStmt("goto", label=name)
    if first == "halt":
        return TStmt("halt")
    if first == "branch":
        p = _ExprParser(text[len("branch"):], lineno, ctx)
        expr = p.parse_expr()
        _infer_sizes(expr, ctx["addr_size"], lineno)
        return TStmt("branch", target=expr)
    if first == "call":
        p = _ExprParser(text[len("call"):], lineno, ctx)
        expr = p.parse_expr()
        _infer_sizes(expr, ctx["addr_size"], lineno)
        return TStmt("call", target=expr)
    if first == "return":
        rest = text[len("return"):].strip()
        if not rest:
            return TStmt("return", target=None)
        p = _ExprParser(rest, lineno, ctx)
        expr = p.parse_expr()
        _infer_sizes(expr, ctx["addr_size"], lineno)
        return TStmt("return", target=expr)
    if first == "cbranch":
        rest = text[len("cbranch"):].strip()
        head, _, tail = rest.partition(",")
        head = head.strip()
        stmt = TStmt("cbranch")
        if head in ctx["labels"]:
            stmt.label = head
        else:
            p = _ExprParser(head, lineno, ctx)
            stmt.target = p.parse_expr()
            _infer_sizes(stmt.target, ctx["addr_size"], lineno)
        p = _ExprParser(tail, lineno, ctx)
        stmt.cond = p.parse_expr()
        _infer_sizes(stmt.cond, 1, lineno)
        return stmt
    if first == "store":
        # store SPACE[EXPR]:n = EXPR
        rest = text[len("store"):].strip()
        lhs, _, rhs = rest.partition("=")
        m = re.fullmatch(r"(\w+)\[(.*)\]:(\d+)", lhs.strip())
        if not m:
            raise SpecError("store needs SPACE[EXPR]:n = EXPR", lineno)
        space, addr_text, size = m.group(1), m.group(2), int(m.group(3))
        if space not in ctx["space_names"]:
            raise SpecError(f"unknown space {space!r}", lineno)
        addr = _ExprParser(addr_text, lineno, ctx).parse_expr()
        _infer_sizes(addr, ctx["addr_size"], lineno)
        value = _ExprParser(rhs, lineno, ctx).parse_expr()
        _infer_sizes(value, size, lineno)
        return TStmt("store", space=space, size=size, addr=addr, expr=value)
    if first == "intrinsic" or text.split("=")[-1].strip().startswith(
            "intrinsic"):
        dst = None
        body = text
        if first != "intrinsic":
            dst_text, _, body = text.partition("=")
            dst = _parse_dst(dst_text.strip(), lineno, ctx)
        m = re.fullmatch(r'intrinsic\s+"([^"]+)"\s*\((.*)\)\s*',
                         body.strip())
        if not m:
            raise SpecError('intrinsic needs "name"(args)', lineno)
        args = []
        if m.group(2).strip():
            for piece in m.group(2).split(","):
                e = _ExprParser(piece, lineno, ctx).parse_expr()
                if _try_infer(e, lineno) is None:
                    raise SpecError("intrinsic arg needs explicit size",
                                    lineno)
                _infer_sizes(e, _try_infer(e, lineno), lineno)
                args.append(e)
        return TStmt("intrinsic", name=m.group(1), args=tuple(args), dst=dst)

    # plain assignment
    if "=" not in text:
        raise SpecError(f"cannot parse statement {text!r}", lineno)
    dst_text, _, rhs = text.partition("=")
    dst = _parse_dst(dst_text.strip(), lineno, ctx)
    expr = _ExprParser(rhs, lineno, ctx).parse_expr()
    dst_size = dst.size
    if dst.kind == "regidx" and dst_size is None:
        dst_size = ctx["bank_size"].get(dst.bank)
    _infer_sizes(expr, dst_size, lineno)
    return TStmt("assign", dst=dst, expr=expr)


def _parse_dst(text: str, lineno: int, ctx: dict) -> TExpr:
    m = re.fullmatch(r"(tmp\w*):(\d+)", text)
    if m:
        name, size = m.group(1), int(m.group(2))
        if size not in VALID_SIZES:
            raise SpecError(f"bad tmp size {size}", lineno)
        prev = ctx["tmps"].get(name)
        if prev is not None and prev != size:
            raise SpecError(f"{name} redeclared with different size", lineno)
        ctx["tmps"][name] = size
        return TExpr("tmp", name=name, size=size)
    if text in ctx["tmps"]:
        return TExpr("tmp", name=text, size=ctx["tmps"][text])
    m = re.fullmatch(r"(\w+)\[(\w+)\]", text)
    if m:
        bank, fname = m.group(1), m.group(2)
        if fname not in ctx["fields"]:
            raise SpecError(f"unknown field {fname!r}", lineno)
        return TExpr("regidx", bank=bank, name=fname,
                     size=ctx["bank_size"].get(bank))
    if text in ctx["reg_names"]:
        return TExpr("reg", name=text, size=ctx["reg_names"][text].size)
    raise SpecError(f"bad assignment target {text!r}", lineno)


# ---------------------------------------------------------------------------
# Spec file parsing
# ---------------------------------------------------------------------------

_ATTR_RE = re.compile(r'(\w+)=("(?:[^"\\]|\\.)*"|\S+)')


def _parse_attrs(text: str, lineno: int) -> tuple[dict, list[str]]:
    attrs = {}
    flags = []
    pos = 0
    for m in _ATTR_RE.finditer(text):
        for word in text[pos:m.start()].split():
            flags.append(word)
        value = m.group(2)
        if value.startswith('"'):
            value = value[1:-1]
        attrs[m.group(1)] = value
        pos = m.end()
    for word in text[pos:].split():
        flags.append(word)
    return attrs, flags


def _strip_comment(line: str) -> str:
    out = []
    in_quote = False
    for ch in line:
        if ch == '"':
            in_quote = not in_quote
        if ch == "#" and not in_quote:
            break
        out.append(ch)
    return "".join(out)


def parse_spec(text: str) -> ProcessorSpec:
    """Parse and fully validate a processor spec; decode-ambiguity checked."""
    lines = text.splitlines()
    name = version = None
    endianness = "little"
    spaces: list[AddressSpace] = []
    registers: dict[str, VarNode] = {}
    reg_lines: dict[str, int] = {}
    pc_register = None
    raw_patterns = []   # (attrs dict, flags, body lines, lineno)

    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "arch":
            parts = rest.split()
            if len(parts) != 2:
                raise SpecError("arch needs <name> <version>", lineno)
            name, version = parts
        elif head == "endian":
            if rest.strip() not in ("little", "big"):
                raise SpecError("endian must be little or big", lineno)
            endianness = rest.strip()
        elif head == "space":
            sname, _, attr_text = rest.strip().partition(" ")
            attrs, flags = _parse_attrs(attr_text, lineno)
            kind = attrs.get("kind")
            if kind not in ("ram", "register", "temporary"):
                raise SpecError(f"bad space kind {kind!r}", lineno)
            letter = attrs.get("letter") or DEFAULT_LETTERS[kind]
            spaces.append(AddressSpace(
                id=len(spaces), name=sname, kind=kind,
                word_size_bytes=int(attrs.get("wordsize", "1"), 0),
                extent_bytes=int(attrs.get("size", "0"), 0),
                letter=letter))
        elif head == "reg":
            rname, _, attr_text = rest.strip().partition(" ")
            attrs, flags = _parse_attrs(attr_text, lineno)
            if rname in registers:
                raise SpecError(f"duplicate register {rname}", lineno)
            reg_space = next((s for s in spaces if s.kind == "register"),
                             None)
            if reg_space is None:
                raise SpecError("reg before register space", lineno)
            vn = VarNode(reg_space.id, int(attrs["offset"], 0),
                         int(attrs["size"], 0))
            if vn.size not in VALID_SIZES:
                raise SpecError(f"bad register size {vn.size}", lineno)
            if vn.offset + vn.size > reg_space.extent_bytes:
                raise SpecError(
                    f"register {rname} outside register space", lineno)
            registers[rname] = vn
            reg_lines[rname] = lineno
            if "pc" in flags:
                pc_register = rname
        elif head == "insn":
            if not rest.rstrip().endswith("{"):
                raise SpecError("insn line must end with '{'", lineno)
            mnemonic, _, attr_text = rest.strip().partition(" ")
            attrs, _ = _parse_attrs(attr_text.rstrip("{").strip(), lineno)
            body = []
            while i < len(lines):
                body_line = _strip_comment(lines[i])
                i += 1
                if body_line.strip() == "}":
                    break
                if body_line.strip():
                    body.append((body_line, i))
            else:
                raise SpecError("unterminated insn body", lineno)
            raw_patterns.append((mnemonic, attrs, body, lineno))
        else:
            raise SpecError(f"unknown directive {head!r}", lineno)

    if name is None:
        raise SpecError("missing arch line")
    letters = [s.letter for s in spaces]
    if len(set(letters)) != len(letters):
        raise SpecError("space letters collide; add letter=<c>")
    spaces.append(AddressSpace(id=len(spaces), name="const", kind="constant",
                               extent_bytes=0, letter=""))
    space_map = SpaceMap(spaces)
    if pc_register is None:
        raise SpecError("no register marked as pc")

    ram = next((s for s in spaces if s.kind == "ram"), None)
    if ram is None:
        raise SpecError("no ram space declared")
    addr_size = next((sz for sz in VALID_SIZES
                      if ram.extent_bytes <= (1 << (8 * sz))), 8)

    bank_size = {}
    for rname, vn in registers.items():
        m = re.fullmatch(r"([A-Za-z]+)\d+", rname)
        if m:
            bank_size.setdefault(m.group(1), vn.size)

    patterns = []
    widths = set()
    for mnemonic, attrs, body, lineno in raw_patterns:
        try:
            total_bits = int(attrs["bits"], 0)
            match = attrs["match"].replace(" ", "")
            asm_template = attrs["asm"]
        except KeyError as e:
            raise SpecError(f"insn missing attribute {e}", lineno)
        if total_bits % 8 or len(match) != total_bits:
            raise SpecError(
                f"match length {len(match)} != bits {total_bits}", lineno)
        rename = {}
        for pair in attrs.get("names", "").split(","):
            if pair.strip():
                short, _, long_name = pair.partition("=")
                rename[short.strip()] = long_name.strip()
        fixed_mask = fixed_value = 0
        field_bits: dict[str, list[int]] = {}
        for pos, ch in enumerate(match):
            bit = total_bits - 1 - pos
            if ch == "0" or ch == "1":
                fixed_mask |= 1 << bit
                fixed_value |= int(ch) << bit
            elif ch == ".":
                continue
            elif ch.isalpha():
                field_bits.setdefault(ch, []).append(bit)
            else:
                raise SpecError(f"bad match char {ch!r}", lineno)
        fields = []
        for letter, bits in field_bits.items():
            bits.sort()
            if bits != list(range(bits[0], bits[-1] + 1)):
                raise SpecError(
                    f"field {letter!r} bits not contiguous", lineno)
            fields.append((rename.get(letter, letter), bits[-1], bits[0]))
        fields.sort(key=lambda f: -f[1])

        ctx = {
            "space_names": {s.name for s in spaces if s.kind != "constant"},
            "reg_names": registers,
            "fields": {f[0] for f in fields},
            "tmps": {},
            "labels": set(),
            "addr_size": addr_size,
            "bank_size": bank_size,
        }
        for body_line, body_lineno in body:
            stripped = body_line.strip()
            if stripped.startswith("local "):
                ctx["labels"].add(stripped[len("local"):].strip()
                                  .rstrip(":").strip())
        statements = [_parse_statement(body_line, body_lineno, ctx)
                      for body_line, body_lineno in body]
        if not statements:
            raise SpecError(f"{mnemonic}: empty semantics", lineno)
        if statements and statements[-1].kind == "label":
            raise SpecError(f"{mnemonic}: label at end of template", lineno)
        template = SemanticTemplate(statements, dict(ctx["tmps"]),
                                    set(ctx["labels"]))
        patterns.append(InstructionPattern(
            mnemonic, total_bits, fixed_mask, fixed_value, fields,
            asm_template, template, lineno))
        widths.add(total_bits)

    if not patterns:
        raise SpecError("spec declares no instructions")
    if len(widths) != 1:
        raise SpecError("mixed instruction widths are not supported")

    for i_a in range(len(patterns)):
        for i_b in range(i_a + 1, len(patterns)):
            a, b = patterns[i_a], patterns[i_b]
            common = a.fixed_mask & b.fixed_mask
            if (a.fixed_value ^ b.fixed_value) & common == 0:
                raise SpecError(
                    f"patterns {a.mnemonic} and {b.mnemonic} overlap on "
                    f"their fixed bits (decode would be ambiguous)",
                    b.lineno)

    return ProcessorSpec(
        name=name, version=version, spaces=space_map, registers=registers,
        endianness=endianness, patterns=patterns,
        content_hash=hashlib.sha256(text.encode()).hexdigest(),
        pc_register=pc_register, instruction_width=widths.pop() // 8)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def decode(spec: ProcessorSpec, data: bytes, address: int
           ) -> tuple[InstructionPattern, dict[str, int], int]:
    """Match instruction bytes against the spec's patterns.

    Returns the unique matching pattern, its extracted field values, and the
    instruction length in bytes.
    """
    width = spec.instruction_width
    if len(data) < width:
        raise DecodeError(address, data)
    word = int.from_bytes(data[:width], "big")
    for pattern in spec.patterns:
        if (word & pattern.fixed_mask) == pattern.fixed_value:
            fields = {}
            for fname, msb, lsb in pattern.fields:
                fields[fname] = (word >> lsb) & ((1 << (msb - lsb + 1)) - 1)
            return pattern, fields, width
    raise DecodeError(address, data[:width])


# ---------------------------------------------------------------------------
# Lifting
# ---------------------------------------------------------------------------

class _Emitter:
    def __init__(self, spec: ProcessorSpec, fields: dict[str, int],
                 template: SemanticTemplate):
        self.spec = spec
        self.fields = fields
        self.ops: list[Operation] = []
        self.temp_space = spec.spaces.temp
        self.const_space = spec.spaces.const
        self.next_temp = 0
        self.tmp_vars: dict[str, VarNode] = {}
        for tname, size in template.tmp_sizes.items():
            self.tmp_vars[tname] = self.alloc_temp(size)
        self.label_at: dict[str, int] = {}
        self.patches: list[tuple[int, str]] = []  # (op index, label)

    def alloc_temp(self, size: int) -> VarNode:
        offset = (self.next_temp + size - 1) // size * size
        self.next_temp = offset + size
        if self.next_temp > self.temp_space.extent_bytes:
            raise SpecError("instruction exhausts the temporary space")
        return VarNode(self.temp_space.id, offset, size)

    def const(self, value: int, size: int) -> VarNode:
        return VarNode(self.const_space.id,
                       value & ((1 << (8 * size)) - 1), size)

    def reg(self, name: str) -> VarNode:
        return self.spec.registers[name]

    def regidx(self, bank: str, fname: str) -> VarNode:
        value = self.fields[fname]
        name = f"{bank}{value}"
        reg = self.spec.registers.get(name)
        if reg is None:
            raise SpecError(f"no register {name} for field value {value}")
        return reg

    def eval(self, e: TExpr) -> VarNode:
        """Instantiate an expression, materializing interior nodes."""
        if e.kind == "int":
            return self.const(e.value, e.size)
        if e.kind == "field":
            return self.const(self.fields[e.name], e.size)
        if e.kind == "reg":
            return self.reg(e.name)
        if e.kind == "regidx":
            return self.regidx(e.bank, e.name)
        if e.kind == "tmp":
            return self.tmp_vars[e.name]
        out = self.alloc_temp(e.size)
        self.emit_into(e, out)
        return out

    def emit_into(self, e: TExpr, out: VarNode):
        """Emit ops computing `e` into varnode `out` (sizes already agree)."""
        if e.kind == "load":
            space = self.spec.spaces.by_name[e.space]
            addr = self.eval(e.args[0])
            self.ops.append(Operation(
                "LOAD", (self.const(space.id, 4), addr), out))
        elif e.kind == "op":
            args = tuple(self.eval(a) for a in e.args)
            self.ops.append(Operation(e.name, args, out))
        else:
            src = self.eval(e)
            self.ops.append(Operation("COPY", (src,), out))

    def branch_target(self, e: TExpr) -> tuple[str, VarNode]:
        """Classify a control target: constant address vs computed value."""
        vn = self.eval(e)
        if vn.space == self.const_space.id:
            return "direct", VarNode(self.spec.ram_space.id, vn.offset,
                                     self.spec.address_size)
        return "indirect", vn

    def run(self, statements: list[TStmt]):
        for stmt in statements:
            kind = stmt.kind
            if kind == "label":
                self.label_at[stmt.label] = len(self.ops)
            elif kind == "assign":
                if stmt.dst.kind == "tmp":
                    dst = self.tmp_vars[stmt.dst.name]
                elif stmt.dst.kind == "regidx":
                    dst = self.regidx(stmt.dst.bank, stmt.dst.name)
                else:
                    dst = self.reg(stmt.dst.name)
                self.emit_into(stmt.expr, dst)
            elif kind == "store":
                space = self.spec.spaces.by_name[stmt.space]
                addr = self.eval(stmt.addr)
                value = self.eval(stmt.expr)
                self.ops.append(Operation(
                    "STORE", (self.const(space.id, 4), addr, value)))
            elif kind == "branch":
                how, vn = self.branch_target(stmt.target)
                self.ops.append(Operation(
                    "BRANCH" if how == "direct" else "IBRANCH", (vn,)))
            elif kind == "goto":
                self.patches.append((len(self.ops), stmt.label))
                self.ops.append(Operation("BRANCH", (self.const(0, 4),)))
            elif kind == "cbranch":
                cond = self.eval(stmt.cond)
                if stmt.label is not None:
                    self.patches.append((len(self.ops), stmt.label))
                    self.ops.append(Operation(
                        "CBRANCH", (self.const(0, 4), cond)))
                else:
                    how, vn = self.branch_target(stmt.target)
                    if how == "indirect":
                        raise SpecError("cbranch target must be constant "
                                        "or a label")
                    self.ops.append(Operation("CBRANCH", (vn, cond)))
            elif kind == "call":
                how, vn = self.branch_target(stmt.target)
                self.ops.append(Operation(
                    "CALL" if how == "direct" else "ICALL", (vn,)))
            elif kind == "return":
                if stmt.target is None:
                    vn = self.spec.pc
                else:
                    vn = self.eval(stmt.target)
                self.ops.append(Operation("RETURN", (vn,)))
            elif kind == "intrinsic":
                args = tuple(self.eval(a) for a in stmt.args)
                if stmt.dst is None:
                    out = None
                elif stmt.dst.kind == "tmp":
                    out = self.tmp_vars[stmt.dst.name]
                elif stmt.dst.kind == "regidx":
                    out = self.regidx(stmt.dst.bank, stmt.dst.name)
                else:
                    out = self.reg(stmt.dst.name)
                self.ops.append(Operation("INTRINSIC", args, out,
                                          intrinsic_name=stmt.name))
            elif kind == "halt":
                self.ops.append(Operation("HALT"))
            else:
                raise SpecError(f"unhandled statement kind {kind}")
        for op_index, label in self.patches:
            target = self.label_at.get(label)
            if target is None:
                raise SpecError(f"label {label!r} never defined")
            old = self.ops[op_index]
            fixed = (self.const(target, 4),) + old.inputs[1:]
            self.ops[op_index] = Operation(old.opcode, fixed, old.output)


def lift_instruction(spec: ProcessorSpec, data: bytes,
                     address: int) -> LiftedInstruction:
    """Decode one instruction and instantiate its semantic template."""
    pattern, fields, length = decode(spec, data, address)
    emitter = _Emitter(spec, fields, pattern.semantics)
    emitter.run(pattern.semantics.statements)
    asm = pattern.asm_template.format(**fields)
    return LiftedInstruction(address, length, asm, tuple(emitter.ops))


class ImageView:
    """Raw firmware bytes mapped at a base address."""

    def __init__(self, data: bytes, base: int = 0):
        self.data = bytes(data)
        self.base = base

    def is_mapped(self, address: int) -> bool:
        return self.base <= address < self.base + len(self.data)

    def read_bytes(self, address: int, n: int) -> bytes:
        lo = address - self.base
        if lo < 0 or lo > len(self.data):
            return b""
        return self.data[lo:lo + n]


BLOCK_INSTRUCTION_CAP = 64


def lift_block(spec: ProcessorSpec, mem, address: int, *,
               optimize: bool = False, cache=None,
               optimizer_fn: Optional[Callable] = None,
               cache_salt: str = "") -> IRBlock:
    """Lift a block: until the first control transfer, HALT, decode error,
    or the 64-instruction cap.

    With optimize=True the block is routed through the optimizer (and the
    shared cache, when one is given, is consulted first).  `cache_salt`
    distinguishes entries whose optimization context differs (e.g. watched
    registers that must survive dead-code removal).
    """
    instructions = []
    diagnostics = []
    addr = address
    raw = bytearray()
    for _ in range(BLOCK_INSTRUCTION_CAP):
        data = mem.read_bytes(addr, spec.instruction_width)
        if len(data) < spec.instruction_width:
            diagnostics.append(f"unmapped at 0x{addr:x}")
            break
        try:
            insn = lift_instruction(spec, data, addr)
        except DecodeError as e:
            diagnostics.append(str(e))
            break
        instructions.append(insn)
        raw.extend(data)
        addr += insn.length_bytes
        if any(op.is_control(spec.spaces) for op in insn.ops):
            break
    block = IRBlock.build(address, instructions, spec.spaces, diagnostics)
    if not optimize or not instructions:
        return block

    if optimizer_fn is None:
        from .optimizer import optimize_block
        optimizer_fn = optimize_block

    if cache is not None:
        key = cache.key_for(spec, address, bytes(raw), cache_salt)
        hit = cache.get(key, spec)
        if hit is not None:
            return hit
        cache.saturation_calls += 1
        optimized = optimizer_fn(block, spec)
        cache.put(key, optimized, spec)
        return optimized
    return optimizer_fn(block, spec)
