"""Text format for solver constraint files.

One constraint per line (asserted nonzero), infix syntax over bitvector
variables `v<N>:<bits>` and integer literals (width inferred from the other
operand where unambiguous, or given as `0x4:8`):

    (v0:8 & 0x4) != 0x0
    v1:16 == 0xcaff

Operators: `& | ^ + - * << >> == != <`, functions `sless(a,b)`,
`sright(a,b)`, `zext(e,bits)`, `sext(e,bits)`, `trunc(e,bits)`, and `!e`.
Lines starting with `#` are comments.
"""

from __future__ import annotations

import re

from .symsolve import Constraint, SymExpr

_TOKEN_RE = re.compile(r"""
    (?P<var>v\d+:\d+)
  | (?P<hex>0x[0-9a-fA-F]+(?::\d+)?)
  | (?P<int>\d+(?::\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op><<|>>|==|!=|[()!,&|^+\-*<])
  | (?P<ws>\s+)
""", re.VERBOSE)

_BINOPS = [
    [("==", "INT_EQUAL"), ("!=", "INT_NOTEQUAL"), ("<", "INT_LESS")],
    [("|", "INT_OR")],
    [("^", "INT_XOR")],
    [("&", "INT_AND")],
    [("<<", "INT_LEFT"), (">>", "INT_RIGHT")],
    [("+", "INT_ADD"), ("-", "INT_SUB")],
    [("*", "INT_MUL")],
]

_FUNCTIONS = {"sless": "INT_SLESS", "sright": "INT_SRIGHT",
              "zext": "INT_ZEXT", "sext": "INT_SEXT", "trunc": "TRUNC"}

_CMP = {"INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS"}


class ConstraintSyntaxError(ValueError):
    pass


class _Parser:
    def __init__(self, text: str, lineno: int):
        self.tokens = []
        self.lineno = lineno
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise ConstraintSyntaxError(
                    f"line {lineno}: bad token at {text[pos:]!r}")
            pos = m.end()
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, m.group()))
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None,
                                                                      None)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, text):
        kind, tok = self.next()
        if tok != text:
            raise ConstraintSyntaxError(
                f"line {self.lineno}: expected {text!r}, found {tok!r}")

    def parse(self) -> "_Node":
        node = self.parse_level(0)
        if self.i != len(self.tokens):
            raise ConstraintSyntaxError(
                f"line {self.lineno}: trailing input "
                f"{self.tokens[self.i][1]!r}")
        return node

    def parse_level(self, level) -> "_Node":
        if level == len(_BINOPS):
            return self.parse_primary()
        node = self.parse_level(level + 1)
        while True:
            _, tok = self.peek()
            opcode = next((op for sym, op in _BINOPS[level] if sym == tok),
                          None)
            if opcode is None:
                return node
            self.next()
            rhs = self.parse_level(level + 1)
            node = _Node(opcode, (node, rhs))

    def parse_primary(self) -> "_Node":
        kind, tok = self.next()
        if tok == "(":
            node = self.parse_level(0)
            self.expect(")")
            return node
        if tok == "!":
            return _Node("BOOL_NOT", (self.parse_primary(),))
        if kind == "var":
            name, bits = tok.split(":")
            return _Node("var", (), var=int(name[1:]), width=int(bits))
        if kind in ("hex", "int"):
            if ":" in tok:
                literal, bits = tok.split(":")
                return _Node("const", (), value=int(literal, 0),
                             width=int(bits))
            return _Node("const", (), value=int(tok, 0))
        if kind == "name" and tok in _FUNCTIONS:
            self.expect("(")
            first = self.parse_level(0)
            self.expect(",")
            opcode = _FUNCTIONS[tok]
            if opcode in ("INT_ZEXT", "INT_SEXT", "TRUNC"):
                bits_kind, bits_tok = self.next()
                if bits_kind not in ("int", "hex"):
                    raise ConstraintSyntaxError(
                        f"line {self.lineno}: {tok} needs a literal width")
                self.expect(")")
                return _Node(opcode, (first,), width=int(bits_tok, 0))
            second = self.parse_level(0)
            self.expect(")")
            return _Node(opcode, (first, second))
        raise ConstraintSyntaxError(
            f"line {self.lineno}: unexpected token {tok!r}")


class _Node:
    def __init__(self, op, args, value=None, var=None, width=None):
        self.op = op
        self.args = args
        self.value = value
        self.var = var
        self.width = width


def _infer(node: _Node, expected, lineno) -> int:
    if node.op == "var":
        if expected is not None and node.width != expected:
            raise ConstraintSyntaxError(
                f"line {lineno}: v{node.var} is {node.width} bits, "
                f"context needs {expected}")
        return node.width
    if node.op == "const":
        if node.width is None:
            if expected is None:
                raise ConstraintSyntaxError(
                    f"line {lineno}: cannot infer width of "
                    f"{node.value:#x}; write {node.value:#x}:<bits>")
            node.width = expected
        elif expected is not None and node.width != expected:
            raise ConstraintSyntaxError(
                f"line {lineno}: width mismatch on {node.value:#x}")
        return node.width
    if node.op in ("INT_ZEXT", "INT_SEXT", "TRUNC"):
        _infer(node.args[0], None, lineno)
        if node.args[0].width is None:
            raise ConstraintSyntaxError(
                f"line {lineno}: resize input needs a width")
        return node.width
    if node.op == "BOOL_NOT":
        _infer(node.args[0], None, lineno)
        node.width = 8
        return 8
    if node.op in _CMP:
        a, b = node.args
        width = _try(a) or _try(b)
        if width is None:
            raise ConstraintSyntaxError(
                f"line {lineno}: cannot infer comparison width")
        _infer(a, width, lineno)
        _infer(b, width, lineno)
        node.width = 8
        return 8
    a, b = node.args
    width = expected or _try(a) or _try(b)
    if width is None:
        raise ConstraintSyntaxError(
            f"line {lineno}: cannot infer width of {node.op}")
    _infer(a, width, lineno)
    _infer(b, width, lineno)
    node.width = width
    return width


def _try(node: _Node):
    if node.op in ("var", "const"):
        return node.width
    if node.op in ("INT_ZEXT", "INT_SEXT", "TRUNC"):
        return node.width
    if node.op in _CMP or node.op == "BOOL_NOT":
        return 8
    for a in node.args:
        width = _try(a)
        if width:
            return width
    return None


def _to_expr(node: _Node) -> SymExpr:
    if node.op == "var":
        return SymExpr.variable(node.var, node.width)
    if node.op == "const":
        return SymExpr.const(node.value, node.width)
    return SymExpr.apply(node.op, tuple(_to_expr(a) for a in node.args),
                         node.width)


def parse_constraint(text: str, lineno: int = 1) -> Constraint:
    node = _Parser(text, lineno).parse()
    _infer(node, None, lineno)
    return Constraint(_to_expr(node))


def parse_constraint_file(text: str) -> list[Constraint]:
    constraints = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            constraints.append(parse_constraint(line, lineno))
    if not constraints:
        raise ConstraintSyntaxError("no constraints in file")
    return constraints
