"""Symbolic data-flow tracking and concolic execution.

`ExprTracker` shadows selected values with `symsolve.SymExpr` trees as the
interpreter runs: reads of watched memory produce fresh variables, pure ops
combine tainted operands (concrete operands become constants), and
conditional branches on tainted conditions invoke a callback with the
constraint imposed.  Concrete execution is never blocked: every symbolic
value keeps its concrete shadow.

`ConcolicState` builds on the tracker for execution mode two: memory
regions are marked symbolic, path constraints accumulate at branches, and
negation queries go to the layered solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import bitops, symsolve
from .ir import VarNode
from .symsolve import Constraint, SolverResult, SymExpr

log = logging.getLogger(__name__)

MAX_EXPR_NODES = 128


def _expr_nodes(e: SymExpr) -> int:
    return 1 + sum(_expr_nodes(a) for a in e.args)


class ExprTracker:
    """Taint map from storage keys to symbolic expressions.

    Keys are exact (space, offset, size) triples for register/temp cells
    and ("ram", address, size) for memory; writes invalidate overlapping
    entries.  The tracker is attached as `sim.tracker` and driven by the
    interpreter.
    """

    def __init__(self,
                 on_branch: Optional[Callable] = None,
                 watch_read: Optional[Callable[[int, int], bool]] = None):
        self.exprs: dict[tuple, SymExpr] = {}
        self.on_branch = on_branch
        self.watch_read = watch_read      # (addr, size) -> symbolize?
        self.next_var = 0
        self.var_meta: dict[int, tuple] = {}   # id -> (addr, size)
        self.fresh_var_hook: Optional[Callable] = None

    # -- key helpers --------------------------------------------------

    @staticmethod
    def _vn_key(vn: VarNode) -> tuple:
        return (vn.space, vn.offset, vn.size)

    def _invalidate(self, key: tuple) -> None:
        space, offset, size = key
        stale = [k for k in self.exprs
                 if k[0] == space
                 and k[1] < offset + size and offset < k[1] + k[2]]
        for k in stale:
            del self.exprs[k]

    def set_expr(self, key: tuple, expr: Optional[SymExpr]) -> None:
        self._invalidate(key)
        if expr is not None and _expr_nodes(expr) <= MAX_EXPR_NODES:
            self.exprs[key] = expr

    def expr_of(self, vn: VarNode, value: int) -> SymExpr:
        e = self.exprs.get(self._vn_key(vn))
        if e is not None:
            return e
        return SymExpr.const(value, 8 * vn.size)

    def is_tainted(self, vn: VarNode) -> bool:
        return self._vn_key(vn) in self.exprs

    def new_variable(self, addr: int, size: int) -> SymExpr:
        var_id = self.next_var
        self.next_var += 1
        self.var_meta[var_id] = (addr, size)
        expr = SymExpr.variable(var_id, 8 * size)
        if self.fresh_var_hook is not None:
            self.fresh_var_hook(var_id, addr, size)
        return expr

    # -- interpreter hooks ---------------------------------------------

    def on_copy(self, sim, src: VarNode, dst: VarNode) -> None:
        e = self.exprs.get(self._vn_key(src))
        self.set_expr(self._vn_key(dst), e)

    def on_op(self, sim, op, in_values, out_value) -> None:
        if not any(self.is_tainted(vn) for vn in op.inputs):
            self.set_expr(self._vn_key(op.output), None)
            return
        args = tuple(self.expr_of(vn, v)
                     for vn, v in zip(op.inputs, in_values))
        self.set_expr(self._vn_key(op.output),
                      SymExpr.apply(op.opcode, args, 8 * op.output.size))

    def on_load(self, sim, op, value) -> None:
        space = sim.spec.spaces.by_id[op.inputs[0].offset]
        out_key = self._vn_key(op.output)
        if space.kind != "ram":
            self.set_expr(out_key, None)
            return
        addr = sim.read_varnode(op.inputs[1])
        mem_key = ("ram", addr, op.output.size)
        e = self.exprs.get(mem_key)
        if e is None and self.watch_read is not None and self.watch_read(
                addr, op.output.size):
            e = self.new_variable(addr, op.output.size)
        self.set_expr(out_key, e)

    def on_store(self, sim, op, addr, value) -> None:
        space = sim.spec.spaces.by_id[op.inputs[0].offset]
        if space.kind != "ram":
            return
        size = op.inputs[2].size
        key = ("ram", addr, size)
        e = self.exprs.get(self._vn_key(op.inputs[2]))
        self._invalidate_ram(addr, size)
        if e is not None:
            self.exprs[key] = e

    def _invalidate_ram(self, addr: int, size: int) -> None:
        stale = [k for k in self.exprs
                 if k[0] == "ram" and k[1] < addr + size
                 and addr < k[1] + k[2]]
        for k in stale:
            del self.exprs[k]

    def on_intrinsic(self, sim, op) -> None:
        if op.output is not None:
            self.set_expr(self._vn_key(op.output), None)

    def on_cbranch(self, sim, cond_vn: VarNode, cond: int,
                   taken: bool) -> None:
        e = self.exprs.get(self._vn_key(cond_vn))
        if e is not None and self.on_branch is not None:
            self.on_branch(sim, e, cond, taken)


# ---------------------------------------------------------------------------
# Concolic execution state (mode two)
# ---------------------------------------------------------------------------

@dataclass
class PathConstraint:
    constraint: Constraint
    site: int
    verified: bool = True


class ConcolicState:
    """Marks memory regions symbolic and accumulates path constraints.

    Reads from symbolic regions yield fresh variables whose concrete
    shadows come from actual memory (observers may preseed them; untouched
    bytes read as whatever the state holds, zero by default).
    """

    def __init__(self, sim, regions: tuple[tuple[int, int], ...],
                 external_command=None):
        self.sim = sim
        self.regions = tuple(regions)
        self.external_command = external_command
        self.path: list[PathConstraint] = []
        self.tracker = ExprTracker(on_branch=self._record,
                                   watch_read=self._in_region)
        sim.tracker = self.tracker
        sim.add_stateful(self)

    def _in_region(self, addr: int, size: int) -> bool:
        return any(lo <= addr and addr + size - 1 <= hi
                   for lo, hi in self.regions)

    def _record(self, sim, expr: SymExpr, value: int, taken: bool) -> None:
        constraint = Constraint(expr)
        if value == 0:
            constraint = symsolve.negate(constraint)
        self.path.append(PathConstraint(constraint, sim.state.pc))

    def inject_symbol(self, vn: VarNode, name_addr: int = -1) -> SymExpr:
        """Observer API: make one storage cell symbolic right now."""
        expr = self.tracker.new_variable(name_addr, vn.size)
        self.tracker.set_expr(self.tracker._vn_key(vn), expr)
        return expr

    def negation_query(self, index: int = -1) -> SolverResult:
        """Flip the branch at path position `index`: solve for inputs that
        take the other direction while preserving the prefix."""
        if not self.path:
            return SolverResult("unknown", reason="empty path")
        prefix = [p.constraint for p in self.path[:index if index >= 0
                                                  else len(self.path) - 1]]
        flipped = symsolve.negate(self.path[index].constraint)
        result = symsolve.solve(prefix + [flipped], self.external_command)
        if result.status == "unknown":
            self.path[index].verified = False
        return result

    # snapshot/restore participation
    def snapshot_state(self):
        return (list(self.path), dict(self.tracker.exprs),
                self.tracker.next_var, dict(self.tracker.var_meta))

    def restore_state(self, blob) -> None:
        path, exprs, next_var, meta = blob
        self.path = list(path)
        self.tracker.exprs = dict(exprs)
        self.tracker.next_var = next_var
        self.tracker.var_meta = dict(meta)


def attach_concolic(sim, regions, external_command=None) -> ConcolicState:
    return ConcolicState(sim, tuple(regions), external_command)
