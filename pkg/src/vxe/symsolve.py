"""Bitvector expression trees, constraint evaluation, and layered solving.

Expressions mirror the IR opcode set over widths in bits.  `solve` answers
sat/unsat/unknown through three layers: pattern propagation for the common
peripheral-check shapes, bounded exhaustive search (complete at or below 16
total free-variable bits, returning the minimal satisfying assignment), and
an optional external SMT-LIB 2 process.  Every sat assignment is
re-validated with `eval_expr` before it is returned.
"""

from __future__ import annotations

import logging
import re
import subprocess
from dataclasses import dataclass
from itertools import product
from typing import Optional

from . import bitops

log = logging.getLogger(__name__)

EXHAUSTIVE_BIT_LIMIT = 16


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymExpr:
    """node kinds: const(value), var(var id), apply(IR opcode, children)."""
    kind: str
    width: int                       # bits
    value: Optional[int] = None
    var: Optional[int] = None
    op: Optional[str] = None
    args: tuple["SymExpr", ...] = ()

    @staticmethod
    def const(value: int, width: int) -> "SymExpr":
        return SymExpr("const", width, value=value & ((1 << width) - 1))

    @staticmethod
    def variable(var_id: int, width: int) -> "SymExpr":
        return SymExpr("var", width, var=var_id)

    @staticmethod
    def apply(op: str, args: tuple["SymExpr", ...],
              width: int) -> "SymExpr":
        return SymExpr("apply", width, op=op, args=args)

    def free_vars(self) -> dict[int, int]:
        """var id -> width in bits."""
        out: dict[int, int] = {}
        stack = [self]
        while stack:
            e = stack.pop()
            if e.kind == "var":
                out[e.var] = e.width
            stack.extend(e.args)
        return out


@dataclass(frozen=True)
class Constraint:
    """A width-8 (one byte) expression asserted to be nonzero."""
    expr: SymExpr

    def free_vars(self) -> dict[int, int]:
        return self.expr.free_vars()


@dataclass
class SolverResult:
    status: str                       # sat | unsat | unknown
    assignment: dict[int, int] = None
    reason: str = ""

    @property
    def is_sat(self) -> bool:
        return self.status == "sat"


class EvalError(ValueError):
    pass


def eval_expr(expr: SymExpr, assignment: dict[int, int]) -> int:
    """Concrete evaluation; semantics shared with the executor via bitops."""
    if expr.kind == "const":
        return expr.value
    if expr.kind == "var":
        if expr.var not in assignment:
            raise EvalError(f"unassigned variable v{expr.var}")
        return assignment[expr.var] & ((1 << expr.width) - 1)
    values = [eval_expr(a, assignment) for a in expr.args]
    in_width = expr.args[0].width // 8
    return bitops.apply(expr.op, values, in_width, expr.width // 8)


def check(constraints: list[Constraint], assignment: dict[int, int]) -> bool:
    return all(eval_expr(c.expr, assignment) != 0 for c in constraints)


def negate(constraint: Constraint) -> Constraint:
    e = constraint.expr
    if e.kind == "apply" and e.op == "INT_EQUAL":
        return Constraint(SymExpr.apply("INT_NOTEQUAL", e.args, 8))
    if e.kind == "apply" and e.op == "INT_NOTEQUAL":
        return Constraint(SymExpr.apply("INT_EQUAL", e.args, 8))
    if e.kind == "apply" and e.op == "BOOL_NOT":
        return Constraint(e.args[0])
    return Constraint(SymExpr.apply("BOOL_NOT", (e,), 8))


# ---------------------------------------------------------------------------
# Layer (a): pattern propagation
# ---------------------------------------------------------------------------

def _as_const(e: SymExpr) -> Optional[int]:
    return e.value if e.kind == "const" else None


def _propagate(expr: SymExpr, want_nonzero: bool) -> Optional[dict[int, int]]:
    """Direct candidates for shapes like (x op c1) rel c2; unverified."""
    e = expr
    if e.kind == "apply" and e.op == "BOOL_NOT":
        return _propagate(e.args[0], not want_nonzero)
    if e.kind == "var":
        return {e.var: 1 if want_nonzero else 0}
    if e.kind != "apply" or e.op not in ("INT_EQUAL", "INT_NOTEQUAL"):
        return None
    lhs, rhs = e.args
    c2 = _as_const(rhs)
    if c2 is None:
        return None
    equal_wanted = (e.op == "INT_EQUAL") == want_nonzero

    if lhs.kind == "var":
        if equal_wanted:
            return {lhs.var: c2}
        return {lhs.var: 0 if c2 != 0 else 1}
    if lhs.kind != "apply":
        return None
    op = lhs.op
    if op in ("INT_AND", "INT_XOR"):
        x, c1e = lhs.args
        c1 = _as_const(c1e)
        if c1 is None or x.kind != "var":
            return None
        if op == "INT_XOR":
            if equal_wanted:
                return {x.var: c1 ^ c2}
            return {x.var: 0 if c1 != c2 else 1}
        # AND
        if equal_wanted:
            if c2 & ~c1:
                return None   # impossible; let later layers prove unsat
            return {x.var: c2}
        # (x & c1) != c2: minimal x differing; with c2 == 0, set the
        # lowest mask bit
        if c2 == 0 and c1 != 0:
            return {x.var: c1 & -c1}
        return {x.var: 0 if c2 != 0 else None} if c2 != 0 else None
    if op in ("INT_ZEXT", "TRUNC"):
        (x,) = lhs.args
        if x.kind != "var":
            return None
        if equal_wanted:
            if c2 < (1 << x.width):
                return {x.var: c2}
            return None
        return {x.var: 0 if c2 != 0 else 1}
    return None


# ---------------------------------------------------------------------------
# Layer (b): bounded exhaustive search
# ---------------------------------------------------------------------------

def _exhaustive(constraints: list[Constraint],
                variables: dict[int, int]) -> SolverResult:
    order = sorted(variables)
    ranges = [range(1 << variables[v]) for v in order]
    for combo in product(*ranges):
        assignment = dict(zip(order, combo))
        if check(constraints, assignment):
            return SolverResult("sat", assignment)
    return SolverResult("unsat")


# ---------------------------------------------------------------------------
# Layer (c): external SMT-LIB process
# ---------------------------------------------------------------------------

def emit_smtlib(constraints: list[Constraint]) -> str:
    """QF_BV script with deterministic `v<id>` variable naming."""
    variables: dict[int, int] = {}
    for c in constraints:
        variables.update(c.free_vars())
    lines = ["(set-logic QF_BV)"]
    for var_id in sorted(variables):
        lines.append(f"(declare-const v{var_id} "
                     f"(_ BitVec {variables[var_id]}))")
    for c in constraints:
        lines.append(f"(assert {_smt_bool(c.expr)})")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


def _smt_bv(e: SymExpr) -> str:
    if e.kind == "const":
        return f"#x{e.value:0{e.width // 4}x}"
    if e.kind == "var":
        return f"v{e.var}"
    op = e.op
    bool_ops = {"INT_EQUAL", "INT_NOTEQUAL", "INT_LESS", "INT_SLESS",
                "INT_CARRY", "BOOL_NOT"}
    if op in bool_ops:
        return f"(ite {_smt_bool(e)} #x01 #x00)"
    simple = {"INT_ADD": "bvadd", "INT_SUB": "bvsub", "INT_MUL": "bvmul",
              "INT_AND": "bvand", "INT_OR": "bvor", "INT_XOR": "bvxor",
              "INT_LEFT": "bvshl", "INT_RIGHT": "bvlshr",
              "INT_SRIGHT": "bvashr"}
    if op in simple:
        return (f"({simple[op]} {_smt_bv(e.args[0])} {_smt_bv(e.args[1])})")
    if op == "INT_ZEXT":
        ext = e.width - e.args[0].width
        return f"((_ zero_extend {ext}) {_smt_bv(e.args[0])})"
    if op == "INT_SEXT":
        ext = e.width - e.args[0].width
        return f"((_ sign_extend {ext}) {_smt_bv(e.args[0])})"
    if op == "TRUNC":
        return f"((_ extract {e.width - 1} 0) {_smt_bv(e.args[0])})"
    if op == "COPY":
        return _smt_bv(e.args[0])
    raise EvalError(f"cannot render {op} to SMT-LIB")


def _smt_bool(e: SymExpr) -> str:
    if e.kind == "apply":
        if e.op == "INT_EQUAL":
            return f"(= {_smt_bv(e.args[0])} {_smt_bv(e.args[1])})"
        if e.op == "INT_NOTEQUAL":
            return f"(not (= {_smt_bv(e.args[0])} {_smt_bv(e.args[1])}))"
        if e.op == "INT_LESS":
            return f"(bvult {_smt_bv(e.args[0])} {_smt_bv(e.args[1])})"
        if e.op == "INT_SLESS":
            return f"(bvslt {_smt_bv(e.args[0])} {_smt_bv(e.args[1])})"
        if e.op == "BOOL_NOT":
            return f"(not {_smt_bool(e.args[0])})"
    zero = f"#x{0:0{e.width // 4}x}"
    return f"(not (= {_smt_bv(e)} {zero}))"


_MODEL_RE = re.compile(
    r"\(define-fun (v\d+) \(\) \(_ BitVec \d+\)\s+(#x[0-9a-fA-F]+|#b[01]+)")


def _run_external(constraints: list[Constraint],
                  command: list[str]) -> SolverResult:
    script = emit_smtlib(constraints)
    try:
        proc = subprocess.run(command, input=script, capture_output=True,
                              text=True, timeout=30)
    except (OSError, subprocess.TimeoutExpired) as e:
        return SolverResult("unknown", reason=f"external solver: {e}")
    out = proc.stdout
    if out.startswith("unsat"):
        return SolverResult("unsat")
    if not out.startswith("sat"):
        return SolverResult("unknown",
                            reason=f"external solver said: {out[:80]!r}")
    assignment = {}
    for name, literal in _MODEL_RE.findall(out):
        value = (int(literal[2:], 16) if literal.startswith("#x")
                 else int(literal[2:], 2))
        assignment[int(name[1:])] = value
    if check(constraints, assignment):
        return SolverResult("sat", assignment)
    return SolverResult("unknown", reason="external model failed recheck")


# ---------------------------------------------------------------------------
# Combined solve
# ---------------------------------------------------------------------------

def solve(constraints: list[Constraint],
          external_command: Optional[list[str]] = None) -> SolverResult:
    """Layered solve preferring the minimal satisfying assignment.

    Single-constraint problems try pattern propagation first; problems
    whose total free-variable width is at most 16 bits fall back to
    exhaustive search (complete, minimal-first); anything larger goes to
    the external solver when configured, else `unknown`.
    """
    variables: dict[int, int] = {}
    for c in constraints:
        variables.update(c.free_vars())

    if len(constraints) == 1 and len(variables) == 1:
        candidate = _propagate(constraints[0].expr, want_nonzero=True)
        if candidate is not None and None not in candidate.values():
            if check(constraints, candidate):
                total_bits = sum(variables.values())
                if total_bits > EXHAUSTIVE_BIT_LIMIT:
                    return SolverResult("sat", candidate)
                exhaustive = _exhaustive(constraints, variables)
                return exhaustive if exhaustive.is_sat else SolverResult(
                    "sat", candidate)

    total_bits = sum(variables.values())
    if total_bits <= EXHAUSTIVE_BIT_LIMIT:
        return _exhaustive(constraints, variables)
    if external_command:
        return _run_external(constraints, external_command)
    return SolverResult(
        "unknown",
        reason=f"{total_bits} free bits exceeds the exhaustive limit and "
        "no external solver is configured")
