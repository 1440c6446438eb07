"""Block optimizer: overlap-aware SSA, equality saturation, and dead-code
removal.

Pipeline: to_ssa -> saturate (block-level e-graph, incremental, greedy) ->
out_of_ssa -> eliminate_dead.  The SSA form versions *overlap classes*:
any two varnodes with intersecting byte ranges in one space share a class,
a definition of any member creates a new class version, and partial reads
and writes are expressed with extraction/byte-insertion expressions over
the class value.  Temporaries are instruction-scoped, so their classes are
keyed per instruction and references to them never cross an instruction
boundary.

Soundness guards: instructions containing intra-instruction control flow
pass through opaquely; intrinsics act as full barriers; LOADs carry a
memory-epoch tag so loads separated by a store never unify, and LOAD ops
are never deleted (a read may touch MMIO, and peripheral models observe
reads).  Any internal inconsistency or an op-count increase makes
optimize_block return its input unchanged with a diagnostic (fail open).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from . import bitops
from .egraph import EGraph, ENode, Inconsistency
from .ir import (EFFECT_OPS, Expr, IRBlock, LiftedInstruction, Operation,
                 SSAStatement, VarNode, count_ops, render_varnode,
                 validate_block)

DEFAULT_RULE_BUDGET = 10_000


# ---------------------------------------------------------------------------
# Overlap classes
# ---------------------------------------------------------------------------

@dataclass
class OverlapClass:
    id: int
    space: int
    lo: int
    hi: int
    insn_index: Optional[int]      # temps only: owning instruction
    members: set[VarNode]

    @property
    def rep(self) -> VarNode:
        return VarNode(self.space, self.lo, self.hi - self.lo)


class ClassTable:
    def __init__(self):
        self.classes: list[OverlapClass] = []
        self._index: dict[tuple, list[OverlapClass]] = {}

    @staticmethod
    def build(block: IRBlock, spec) -> "ClassTable":
        spaces = spec.spaces
        temp_id = spaces.temp.id
        const_id = spaces.const.id
        table = ClassTable()
        buckets: dict[tuple, list[tuple[int, int]]] = {}
        for insn_index, insn in enumerate(block.instructions):
            for op in insn.ops:
                for vn in _storage_varnodes(op, spaces):
                    key = ((vn.space, insn_index) if vn.space == temp_id
                           else (vn.space, None))
                    buckets.setdefault(key, []).append(
                        (vn.offset, vn.offset + vn.size))
        for key, intervals in buckets.items():
            space, insn_index = key
            if space == const_id:
                continue
            intervals.sort()
            merged: list[list[int]] = []
            for lo, hi in intervals:
                if merged and lo < merged[-1][1]:
                    merged[-1][1] = max(merged[-1][1], hi)
                else:
                    merged.append([lo, hi])
            table._index[key] = []
            for lo, hi in merged:
                cls = OverlapClass(len(table.classes), space, lo, hi,
                                   insn_index, set())
                table.classes.append(cls)
                table._index[key].append(cls)
        return table

    def lookup(self, vn: VarNode, insn_index: int,
               temp_space: int) -> OverlapClass:
        key = ((vn.space, insn_index) if vn.space == temp_space
               else (vn.space, None))
        for cls in self._index.get(key, ()):
            if cls.lo <= vn.offset and vn.offset + vn.size <= cls.hi:
                cls.members.add(vn)
                return cls
        raise Inconsistency(f"no overlap class for {vn}")


def _storage_varnodes(op: Operation, spaces):
    """Varnodes of an op that name register/temp storage cells."""
    out = []
    skip_first = 1 if op.opcode in ("LOAD", "STORE") else 0
    for vn in op.inputs[skip_first:]:
        kind = spaces.by_id[vn.space].kind
        if kind in ("register", "temporary"):
            out.append(vn)
    if op.output is not None:
        kind = spaces.by_id[op.output.space].kind
        if kind in ("register", "temporary"):
            out.append(op.output)
    return out


# ---------------------------------------------------------------------------
# Byte extraction / insertion expressions over class values
# ---------------------------------------------------------------------------

def _shift_bytes(cls: OverlapClass, vn: VarNode, big_endian: bool) -> int:
    if big_endian:
        return cls.hi - (vn.offset + vn.size)
    return vn.offset - cls.lo


def extract_expr(ref: Expr, cls: OverlapClass, vn: VarNode,
                 big_endian: bool) -> Expr:
    """Expression reading member `vn` out of the class value."""
    width = cls.hi - cls.lo
    if vn.size == width:
        return ref
    sh = 8 * _shift_bytes(cls, vn, big_endian)
    inner = ref
    if sh:
        inner = Expr("INT_RIGHT", width, (ref, Expr.const(sh, width)))
    return Expr("TRUNC", vn.size, (inner,))


def insert_expr(old_ref: Expr, value: Expr, cls: OverlapClass, vn: VarNode,
                big_endian: bool) -> Expr:
    """Byte-insertion: the class value after writing member `vn`."""
    width = cls.hi - cls.lo
    if vn.size == width:
        return value
    sh = 8 * _shift_bytes(cls, vn, big_endian)
    keep_mask = bitops.mask(width) ^ (bitops.mask(vn.size) << sh)
    widened = Expr("INT_ZEXT", width, (value,))
    if sh:
        widened = Expr("INT_LEFT", width, (widened, Expr.const(sh, width)))
    kept = Expr("INT_AND", width, (old_ref, Expr.const(keep_mask, width)))
    return Expr("INT_OR", width, (kept, widened))


# ---------------------------------------------------------------------------
# SSA construction
# ---------------------------------------------------------------------------

@dataclass
class SSAProgram:
    statements: list[SSAStatement]
    stmt_insn: list[int]               # statement -> instruction index
    versions_at: list[dict[int, int]]  # class versions before each statement
    epoch_at: list[int]
    member_value: dict[int, Expr]      # partial writes: stmt -> member RHS
    table: ClassTable
    block: IRBlock
    opaque_insns: set[int]


def _is_opaque(insn: LiftedInstruction, spaces) -> bool:
    const_id = spaces.const.id
    return any(op.opcode in ("BRANCH", "CBRANCH")
               and op.inputs[0].space == const_id
               for op in insn.ops)


def to_ssa(block: IRBlock, spec) -> SSAProgram:
    """Convert a validated block to versioned SSA statements."""
    spaces = spec.spaces
    temp_id = spaces.temp.id
    const_id = spaces.const.id
    big_endian = spec.endianness == "big"
    table = ClassTable.build(block, spec)
    versions: dict[int, int] = {cls.id: 0 for cls in table.classes}
    epoch = 0

    program = SSAProgram([], [], [], [], {}, table, block, set())

    def snapshot(insn_index: int):
        program.versions_at.append(dict(versions))
        program.epoch_at.append(epoch)
        program.stmt_insn.append(insn_index)

    def read(vn: VarNode, insn_index: int) -> Expr:
        if vn.space == const_id:
            return Expr.const(vn.offset, vn.size)
        cls = table.lookup(vn, insn_index, temp_id)
        ref = Expr.make_ref((cls.id, versions[cls.id]), cls.hi - cls.lo)
        return extract_expr(ref, cls, vn, big_endian)

    def define(vn: VarNode, rhs: Expr, insn_index: int,
               opaque: bool = False) -> None:
        cls = table.lookup(vn, insn_index, temp_id)
        old = versions[cls.id]
        versions[cls.id] = old + 1
        if opaque:
            return
        partial = (vn.size != cls.hi - cls.lo)
        expr = rhs
        if partial:
            old_ref = Expr.make_ref((cls.id, old), cls.hi - cls.lo)
            expr = insert_expr(old_ref, rhs, cls, vn, big_endian)
        snapshot(insn_index)
        # snapshot() recorded pre-statement versions; adjust: the def is
        # visible only after this statement, so restore pre-write view
        program.versions_at[-1][cls.id] = old
        stmt_index = len(program.statements)
        if partial:
            program.member_value[stmt_index] = rhs
        program.statements.append(SSAStatement(
            kind="assign", expr=expr, target=(cls.id, old + 1),
            target_member=vn))

    def effect(kind: str, insn_index: int, operands: tuple[Expr, ...] = (),
               tag=None, intrinsic_name=None, output_width=1) -> None:
        snapshot(insn_index)
        program.statements.append(SSAStatement(
            kind=kind, expr=Expr(kind, output_width, operands, tag=tag),
            intrinsic_name=intrinsic_name))

    def barrier_all_registers(insn_index: int) -> None:
        nonlocal epoch
        epoch += 1
        for cls in table.classes:
            if cls.space != temp_id:
                versions[cls.id] += 1

    for insn_index, insn in enumerate(block.instructions):
        if _is_opaque(insn, spaces):
            program.opaque_insns.add(insn_index)
            snapshot(insn_index)
            program.statements.append(SSAStatement(
                kind="opaque", expr=Expr("opaque", 0), barrier=True))
            barrier_all_registers(insn_index)
            continue
        for op in insn.ops:
            opc = op.opcode
            if opc == "COPY":
                define(op.output, read(op.inputs[0], insn_index), insn_index)
            elif (opc in bitops.BINARY_SAME_WIDTH
                  or opc in bitops.COMPARISONS
                  or opc in bitops.RESIZES or opc == "BOOL_NOT"):
                args = tuple(read(vn, insn_index) for vn in op.inputs)
                define(op.output,
                       Expr(opc, op.output.size, args), insn_index)
            elif opc == "LOAD":
                addr = read(op.inputs[1], insn_index)
                space_id = op.inputs[0].offset
                load = Expr("LOAD", op.output.size, (addr,),
                            tag=(space_id, epoch))
                define(op.output, load, insn_index)
            elif opc == "STORE":
                addr = read(op.inputs[1], insn_index)
                value = read(op.inputs[2], insn_index)
                effect("STORE", insn_index, (addr, value),
                       tag=op.inputs[0].offset,
                       output_width=op.inputs[2].size)
                epoch += 1
            elif opc in ("BRANCH", "CALL"):
                effect(opc, insn_index, (), tag=op.inputs[0])
            elif opc == "CBRANCH":
                cond = read(op.inputs[1], insn_index)
                effect("CBRANCH", insn_index, (cond,), tag=op.inputs[0])
            elif opc in ("IBRANCH", "RETURN", "ICALL"):
                effect(opc, insn_index,
                       (read(op.inputs[0], insn_index),),
                       output_width=op.inputs[0].size)
            elif opc == "HALT":
                effect("HALT", insn_index)
            elif opc == "INTRINSIC":
                args = tuple(read(vn, insn_index) for vn in op.inputs)
                effect("INTRINSIC", insn_index, args,
                       tag=op, intrinsic_name=op.intrinsic_name)
                barrier_all_registers(insn_index)
                if op.output is not None:
                    define(op.output, Expr("opaque", op.output.size),
                           insn_index, opaque=True)
            else:
                raise Inconsistency(f"unhandled opcode {opc}")
    return program


# ---------------------------------------------------------------------------
# Saturation + extraction
# ---------------------------------------------------------------------------

_INF = (float("inf"), float("inf"), "")


class _Extractor:
    def __init__(self, program: SSAProgram, graph: EGraph,
                 ref_class: dict[tuple, int], spec):
        self.program = program
        self.graph = graph
        self.ref_class = ref_class
        self.spaces = spec.spaces
        self.temp_id = spec.spaces.temp.id
        self.table = program.table

    def _leaf_text(self, node: ENode) -> str:
        if node.op == "const":
            return f"#0x{node.payload:x}:{node.width}"
        cls_id, _version = node.payload
        return render_varnode(self.table.classes[cls_id].rep, self.spaces)

    def extract(self, class_id: int, stmt_index: int) -> Optional[Expr]:
        versions = self.program.versions_at[stmt_index]
        epoch = self.program.epoch_at[stmt_index]
        insn = self.program.stmt_insn[stmt_index]
        memo: dict[int, tuple] = {}
        visiting: set[int] = set()
        graph = self.graph

        def admissible_leaf(node: ENode) -> bool:
            if node.op == "const":
                return True
            cls_id, version = node.payload
            cls = self.table.classes[cls_id]
            if versions.get(cls_id, 0) != version:
                return False
            if cls.space == self.temp_id and cls.insn_index != insn:
                return False
            return True

        def best(cid: int) -> tuple:
            cid = graph.find(cid)
            if cid in memo:
                return memo[cid]
            if cid in visiting:
                return (_INF, None)
            visiting.add(cid)
            best_cost, best_expr = _INF, None
            for node in graph.enodes(cid):
                cost_expr = node_cost(node)
                if cost_expr is None:
                    continue
                cost, expr = cost_expr
                if cost < best_cost:
                    best_cost, best_expr = cost, expr
            visiting.discard(cid)
            memo[cid] = (best_cost, best_expr)
            return memo[cid]

        def node_cost(node: ENode):
            if node.op == "const":
                return ((1, 1, self._leaf_text(node)),
                        Expr.const(node.payload, node.width))
            if node.op == "ref":
                if not admissible_leaf(node):
                    return None
                return ((1, 1, self._leaf_text(node)),
                        Expr("ref", node.width, ref=node.payload))
            if node.op == "LOAD":
                space_id, node_epoch = node.payload
                if node_epoch != epoch:
                    return None
            child_results = []
            for child in node.children:
                cost, expr = best(child)
                if expr is None:
                    return None
                child_results.append((cost, expr))
            depth = 1 + max(c[0][0] for c in child_results)
            nodes = 1 + sum(c[0][1] for c in child_results)
            text = (node.op + "("
                    + ",".join(c[0][2] for c in child_results) + ")")
            return ((depth, nodes, text),
                    Expr(node.op, node.width,
                         tuple(c[1] for c in child_results),
                         tag=node.payload))

        cost, expr = best(class_id)
        return expr


def _add_expr(graph: EGraph, expr: Expr, ref_class: dict) -> int:
    if expr.op == "const":
        return graph.add_const(expr.value, expr.size)
    if expr.op == "ref":
        cid = graph.add(ENode("ref", expr.size, payload=expr.ref))
        ref_class[expr.ref] = cid
        return cid
    children = tuple(_add_expr(graph, a, ref_class) for a in expr.args)
    return graph.add(ENode(expr.op, expr.size, children, expr.tag))


def saturate(program: SSAProgram, spec,
             budget: int = DEFAULT_RULE_BUDGET) -> SSAProgram:
    """Grow a block-level e-graph statement by statement, greedily applying
    rewrite rules, then re-extract every statement (original order kept)
    minimizing (depth, node count, canonical text)."""
    graph = EGraph(rule_budget=budget)
    ref_class: dict[tuple, int] = {}
    roots: list = []
    for stmt in program.statements:
        if stmt.kind == "opaque":
            roots.append(None)
            continue
        if stmt.kind == "assign":
            root = _add_expr(graph, stmt.expr, ref_class)
            leaf = graph.add(ENode("ref", stmt.expr.size,
                                   payload=stmt.target))
            ref_class[stmt.target] = leaf
            graph.merge(leaf, root)
            member_rhs = program.member_value.get(len(roots))
            member_cid = (None if member_rhs is None
                          else _add_expr(graph, member_rhs, ref_class))
            roots.append(("assign", root, member_cid))
        else:
            child_ids = tuple(_add_expr(graph, a, ref_class)
                              for a in stmt.expr.args)
            roots.append(("effect", child_ids))
        graph.saturate()

    extractor = _Extractor(program, graph, ref_class, spec)
    new_statements: list[SSAStatement] = []
    new_member_value: dict[int, Expr] = {}
    for index, stmt in enumerate(program.statements):
        if stmt.kind == "opaque":
            new_statements.append(stmt)
            continue
        if stmt.kind == "assign":
            _, root, member_cid = roots[index]
            expr = extractor.extract(root, index)
            if expr is None:
                raise Inconsistency("no admissible extraction for assign")
            new_stmt = replace(stmt, expr=expr)
            if member_cid is not None:
                member_expr = extractor.extract(member_cid, index)
                if member_expr is None:
                    raise Inconsistency("no admissible member extraction")
                new_member_value[index] = member_expr
            new_statements.append(new_stmt)
        else:
            _, child_ids = roots[index]
            new_args = []
            for cid in child_ids:
                expr = extractor.extract(cid, index)
                if expr is None:
                    raise Inconsistency("no admissible effect extraction")
                new_args.append(expr)
            new_statements.append(replace(
                stmt, expr=replace(stmt.expr, args=tuple(new_args))))
    return SSAProgram(new_statements, program.stmt_insn,
                      program.versions_at, program.epoch_at,
                      new_member_value, program.table, program.block,
                      program.opaque_insns)


# ---------------------------------------------------------------------------
# Out of SSA
# ---------------------------------------------------------------------------

class _Lowerer:
    def __init__(self, program: SSAProgram, spec):
        self.program = program
        self.spec = spec
        self.spaces = spec.spaces
        self.temp_id = spec.spaces.temp.id
        self.const_id = spec.spaces.const.id
        self.ops_per_insn: list[list[Operation]] = [
            [] for _ in program.block.instructions]
        self._next_temp: dict[int, int] = {}
        for insn_index, insn in enumerate(program.block.instructions):
            top = 0
            for op in insn.ops:
                for vn in op.inputs + ((op.output,) if op.output else ()):
                    if vn.space == self.temp_id:
                        top = max(top, vn.offset + vn.size)
            self._next_temp[insn_index] = top

    def alloc_temp(self, insn_index: int, size: int) -> VarNode:
        offset = (self._next_temp[insn_index] + size - 1) // size * size
        self._next_temp[insn_index] = offset + size
        if offset + size > self.spaces.temp.extent_bytes:
            raise Inconsistency("temporary space exhausted during lowering")
        return VarNode(self.temp_id, offset, size)

    def rep_of(self, ref_key) -> VarNode:
        cls_id, _version = ref_key
        return self.program.table.classes[cls_id].rep

    def leaf(self, expr: Expr) -> Optional[VarNode]:
        if expr.op == "const":
            return VarNode(self.const_id, expr.value, expr.size)
        if expr.op == "ref":
            return self.rep_of(expr.ref)
        return None

    def lower(self, expr: Expr, insn_index: int,
              dst: Optional[VarNode] = None) -> VarNode:
        """Emit ops computing expr; returns the varnode holding the value.
        With dst given, the root writes dst."""
        ops = self.ops_per_insn[insn_index]
        simple = self.leaf(expr)
        if simple is not None:
            if dst is None:
                return simple
            ops.append(Operation("COPY", (simple,), dst))
            return dst
        out = dst or self.alloc_temp(insn_index, expr.size)
        if expr.op == "LOAD":
            space_id, _epoch = expr.tag
            addr = self.lower(expr.args[0], insn_index)
            ops.append(Operation(
                "LOAD", (VarNode(self.const_id, space_id, 4), addr), out))
            return out
        args = tuple(self.lower(a, insn_index) for a in expr.args)
        ops.append(Operation(expr.op, args, out))
        return out


def out_of_ssa(program: SSAProgram, spec) -> IRBlock:
    """Materialize one RTL assignment per surviving SSA statement.

    Full-class writes go to the class representative; partial writes are
    lowered as writes of the member varnode itself, which leaves the
    representative's remaining bytes untouched exactly as the byte-insertion
    expression specifies.
    """
    lower = _Lowerer(program, spec)
    block = program.block
    for index, stmt in enumerate(program.statements):
        insn_index = program.stmt_insn[index]
        if stmt.kind == "opaque":
            lower.ops_per_insn[insn_index].extend(
                block.instructions[insn_index].ops)
            continue
        if stmt.kind == "assign":
            member = stmt.target_member
            member_expr = program.member_value.get(index)
            if member_expr is not None:
                lower.lower(member_expr, insn_index, dst=member)
            else:
                lower.lower(stmt.expr, insn_index, dst=member)
            continue
        ops = lower.ops_per_insn[insn_index]
        kind = stmt.kind
        if kind == "STORE":
            addr = lower.lower(stmt.expr.args[0], insn_index)
            value = lower.lower(stmt.expr.args[1], insn_index)
            ops.append(Operation("STORE", (
                VarNode(lower.const_id, stmt.expr.tag, 4), addr, value)))
        elif kind in ("BRANCH", "CALL"):
            ops.append(Operation(kind, (stmt.expr.tag,)))
        elif kind == "CBRANCH":
            cond = lower.lower(stmt.expr.args[0], insn_index)
            ops.append(Operation("CBRANCH", (stmt.expr.tag, cond)))
        elif kind in ("IBRANCH", "RETURN", "ICALL"):
            target = lower.lower(stmt.expr.args[0], insn_index)
            ops.append(Operation(kind, (target,)))
        elif kind == "HALT":
            ops.append(Operation("HALT"))
        elif kind == "INTRINSIC":
            original: Operation = stmt.expr.tag
            args = tuple(lower.lower(a, insn_index)
                         for a in stmt.expr.args)
            ops.append(Operation("INTRINSIC", args, original.output,
                                 intrinsic_name=stmt.intrinsic_name))
        else:
            raise Inconsistency(f"unhandled statement kind {kind}")

    instructions = []
    pc = spec.pc
    for insn, ops in zip(block.instructions, lower.ops_per_insn):
        if not ops:
            ops = [Operation("COPY", (pc,), pc)]
        instructions.append(replace(insn, ops=tuple(ops)))
    return IRBlock.build(block.start_address, instructions, spec.spaces,
                         block.diagnostics)


# ---------------------------------------------------------------------------
# Liveness and dead code elimination
# ---------------------------------------------------------------------------

def _def_bytes(op: Operation, spaces) -> set:
    if op.output is None:
        return set()
    vn = op.output
    if spaces.by_id[vn.space].kind not in ("register", "temporary"):
        return set()
    return {(vn.space, vn.offset + i) for i in range(vn.size)}


def _use_bytes(op: Operation, spaces) -> set:
    used = set()
    skip_first = 1 if op.opcode in ("LOAD", "STORE", "BRANCH", "CBRANCH",
                                    "CALL") else 0
    for vn in op.inputs[skip_first:]:
        if spaces.by_id[vn.space].kind in ("register", "temporary"):
            used.update((vn.space, vn.offset + i) for i in range(vn.size))
    return used


def liveness(block: IRBlock, spec, protected=frozenset()
             ) -> list[list[set]]:
    """Per-instruction, per-op live-out byte sets, walking backward.

    Registers are conservatively live out of the block; temporaries die at
    their instruction's boundary by construction, which is what keeps
    reused temp offsets in consecutive instructions from creating edges.
    `protected` bytes (registers watched by write observers) are treated
    as observable at every program point.
    """
    spaces = spec.spaces
    reg_space = spec.register_space
    temp_id = spaces.temp.id
    all_registers = {(reg_space.id, i)
                     for i in range(reg_space.extent_bytes)}
    live = set(all_registers)
    result: list[list[set]] = [[] for _ in block.instructions]
    for insn_index in range(len(block.instructions) - 1, -1, -1):
        insn = block.instructions[insn_index]
        live = {b for b in live if b[0] != temp_id}
        opaque = _is_opaque(insn, spaces)
        per_op: list[set] = []
        for op in reversed(insn.ops):
            per_op.append(set(live))
            if opaque:
                live |= _use_bytes(op, spaces)
                continue
            defs = _def_bytes(op, spaces)
            if defs & protected:
                # the watching observer may read any state when it fires,
                # so everything written before this point stays observable
                live |= all_registers
                live |= _use_bytes(op, spaces)
                continue
            keep = op.opcode in EFFECT_OPS or op.opcode == "LOAD"
            if keep or defs & live:
                live -= defs
                live |= _use_bytes(op, spaces)
        per_op.reverse()
        result[insn_index] = per_op
    return result


def eliminate_dead(block: IRBlock, spec, protected=frozenset()) -> IRBlock:
    """Remove assignments whose written bytes are never read (overlap-aware
    via byte granularity).  Stores, branches, intrinsics, calls, HALT,
    LOADs, and writes to observer-watched registers are never removed."""
    spaces = spec.spaces
    live_sets = liveness(block, spec, protected)
    instructions = []
    pc = spec.pc
    for insn_index, insn in enumerate(block.instructions):
        if _is_opaque(insn, spaces):
            instructions.append(insn)
            continue
        kept = []
        for op, live_out in zip(insn.ops, live_sets[insn_index]):
            defs = _def_bytes(op, spaces)
            keep = (op.opcode in EFFECT_OPS or op.opcode == "LOAD"
                    or defs & protected)
            if keep or defs & live_out:
                kept.append(op)
        if not kept:
            kept = [Operation("COPY", (pc,), pc)]
        instructions.append(replace(insn, ops=tuple(kept)))
    return IRBlock.build(block.start_address, instructions, spec.spaces,
                         block.diagnostics)


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def optimize_block(block: IRBlock, spec,
                   budget: int = DEFAULT_RULE_BUDGET,
                   protected=frozenset()) -> IRBlock:
    """to_ssa -> saturate -> out_of_ssa -> eliminate_dead.

    Never increases the op count and preserves every memory and register
    side effect; any internal inconsistency returns the input block with a
    diagnostic instead of failing.
    """
    if validate_block(block, spec):
        return replace(block, diagnostics=block.diagnostics
                       + ("optimizer: input failed validation",))
    try:
        program = to_ssa(block, spec)
        program = saturate(program, spec, budget)
        lowered = out_of_ssa(program, spec)
        result = eliminate_dead(lowered, spec, protected)
    except Inconsistency as e:
        return replace(block, diagnostics=block.diagnostics
                       + (f"optimizer: {e}",))
    if validate_block(result, spec):
        return replace(block, diagnostics=block.diagnostics
                       + ("optimizer: result failed validation",))
    if count_ops(result) > count_ops(block):
        return replace(block, diagnostics=block.diagnostics
                       + ("optimizer: not profitable",))
    return result
