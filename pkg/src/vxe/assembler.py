"""Tiny two-pass assembler for the bundled demo ISAs.

Source lines are instruction text matching the spec's asm templates (the
reverse of disassembly), labels (`name:`), constants (`name = expr`), and
data directives:

    .org ADDR      set the location counter
    .byte A, B     emit bytes
    .half V        emit a 2-byte value (spec data endianness)
    .word V        emit a 4-byte value (spec data endianness)
    .zero N        emit N zero bytes
    .ascii "TEXT"  emit text bytes

Operand holes accept integers or symbols; `0x` literal prefixes in
templates fold into the hole so `beq loop` works against a `beq 0x{i:x}`
template.  Output is a dense image from the lowest emitted address.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .archspec import InstructionPattern, ProcessorSpec


class AsmError(ValueError):
    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


_HOLE_RE = re.compile(r"\{(\w+)(?::[^}]*)?\}")
_TOKEN = r"(?:0x[0-9a-fA-F]+|-?\d+|[A-Za-z_.$][\w.$]*)"


@dataclass
class _Compiled:
    pattern: InstructionPattern
    regex: re.Pattern
    holes: list[str]


def _compile_template(pattern: InstructionPattern) -> _Compiled:
    template = pattern.asm_template
    regex_parts = ["^"]
    holes = []
    pos = 0
    for m in _HOLE_RE.finditer(template):
        literal = template[pos:m.start()]
        if literal.endswith("0x"):
            literal = literal[:-2]
        literal = re.sub(r"\s+", r" ", re.escape(literal))
        literal = literal.replace(r"\ ", r"\s+")
        regex_parts.append(literal)
        regex_parts.append(f"({_TOKEN})")
        holes.append(m.group(1))
        pos = m.end()
    tail = re.sub(r"\s+", r" ", re.escape(template[pos:]))
    regex_parts.append(tail.replace(r"\ ", r"\s+"))
    regex_parts.append("$")
    return _Compiled(pattern, re.compile("".join(regex_parts),
                                         re.IGNORECASE), holes)


@dataclass
class _Item:
    kind: str            # insn | data
    address: int = 0
    lineno: int = 0
    text: str = ""
    data: bytes = b""


class Assembler:
    def __init__(self, spec: ProcessorSpec):
        self.spec = spec
        self.templates: dict[str, list[_Compiled]] = {}
        for pattern in spec.patterns:
            compiled = _compile_template(pattern)
            first_word = pattern.asm_template.split()[0].split("{")[0]
            self.templates.setdefault(first_word.lower(), []).append(compiled)

    def assemble(self, source: str) -> tuple[bytes, int, dict[str, int]]:
        """Returns (image bytes, base address, symbol table)."""
        symbols: dict[str, int] = {}
        items: list[_Item] = []
        address = 0
        width = self.spec.instruction_width

        for lineno, raw in enumerate(source.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip() if '"' not in raw else \
                self._strip_comment_quoted(raw).strip()
            if not line:
                continue
            label = re.fullmatch(r"([A-Za-z_.$][\w.$]*):(.*)", line)
            if label:
                symbols[label.group(1)] = address
                line = label.group(2).strip()
                if not line:
                    continue
            const = re.fullmatch(r"([A-Za-z_.$][\w.$]*)\s*=\s*(\S+)", line)
            if const:
                symbols[const.group(1)] = int(const.group(2), 0)
                continue
            if line.startswith("."):
                directive, _, rest = line.partition(" ")
                if directive == ".org":
                    address = int(rest.strip(), 0)
                    continue
                size = self._directive_size(directive, rest, lineno)
                items.append(_Item("data", address, lineno, line))
                address += size
            else:
                items.append(_Item("insn", address, lineno, line))
                address += width

        chunks: list[tuple[int, bytes]] = []
        for item in items:
            if item.kind == "insn":
                chunks.append((item.address,
                               self._encode(item, symbols)))
            else:
                chunks.append((item.address,
                               self._data_bytes(item, symbols)))
        if not chunks:
            return b"", 0, symbols
        base = min(addr for addr, _ in chunks)
        end = max(addr + len(data) for addr, data in chunks)
        image = bytearray(end - base)
        for addr, data in chunks:
            image[addr - base:addr - base + len(data)] = data
        return bytes(image), base, symbols

    @staticmethod
    def _strip_comment_quoted(raw: str) -> str:
        out = []
        quoted = False
        for ch in raw:
            if ch == '"':
                quoted = not quoted
            if ch == "#" and not quoted:
                break
            out.append(ch)
        return "".join(out)

    def _directive_size(self, directive, rest, lineno) -> int:
        if directive == ".byte":
            return len(rest.split(","))
        if directive == ".half":
            return 2 * len(rest.split(","))
        if directive == ".word":
            return 4 * len(rest.split(","))
        if directive == ".zero":
            return int(rest.strip(), 0)
        if directive == ".ascii":
            m = re.search(r'"(.*)"', rest)
            if not m:
                raise AsmError('.ascii needs a quoted string', lineno)
            return len(m.group(1).encode())
        raise AsmError(f"unknown directive {directive}", lineno)

    def _data_bytes(self, item: _Item, symbols) -> bytes:
        directive, _, rest = item.text.partition(" ")
        endian = self.spec.endianness
        if directive == ".ascii":
            return re.search(r'"(.*)"', rest).group(1).encode()
        if directive == ".zero":
            return bytes(int(rest.strip(), 0))
        values = [self._value(v.strip(), symbols, item.lineno)
                  for v in rest.split(",")]
        size = {".byte": 1, ".half": 2, ".word": 4}[directive]
        out = bytearray()
        for v in values:
            out.extend((v & ((1 << (8 * size)) - 1)).to_bytes(size, endian))
        return bytes(out)

    def _value(self, token: str, symbols, lineno) -> int:
        if token in symbols:
            return symbols[token]
        try:
            return int(token, 0)
        except ValueError:
            raise AsmError(f"unknown symbol {token!r}", lineno) from None

    def _encode(self, item: _Item, symbols) -> bytes:
        text = re.sub(r"\s+", " ", item.text.strip())
        mnemonic = text.split()[0].lower().split("{")[0]
        candidates = self.templates.get(mnemonic, [])
        for compiled in candidates:
            m = compiled.regex.match(text)
            if not m:
                continue
            fields = {}
            for hole, token in zip(compiled.holes, m.groups()):
                fields[hole] = self._value(token, symbols, item.lineno)
            return self._encode_fields(compiled.pattern, fields,
                                       item.lineno)
        raise AsmError(f"cannot assemble {item.text!r}", item.lineno)

    def _encode_fields(self, pattern: InstructionPattern,
                       fields: dict[str, int], lineno) -> bytes:
        word = pattern.fixed_value
        for name, msb, lsb in pattern.fields:
            value = fields.get(name, 0)
            limit = 1 << (msb - lsb + 1)
            if not (0 <= value < limit):
                raise AsmError(
                    f"field {name}={value:#x} does not fit in "
                    f"{msb - lsb + 1} bits", lineno)
            word |= value << lsb
        return word.to_bytes(pattern.total_bits // 8, "big")


def assemble(spec: ProcessorSpec, source: str) -> tuple[bytes, int,
                                                        dict[str, int]]:
    return Assembler(spec).assemble(source)
