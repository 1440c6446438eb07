"""IR interpretation: machine state, the simulator, and execution policies.

A simulator lifts blocks on demand (through the shared cache when present)
and interprets their operations against a byte-array machine state under one
of five policies: concrete, concolic, forced, micro, and flood execution.
Observers witness events and may alter values and control flow; intrinsics
extend the opcode set; snapshot/fork support exploration and fuzzing.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import bitops
from .archspec import ProcessorSpec, lift_block
from .ir import Operation, VarNode
from .observe import (CompareRecord, Event, FlipBranch, Fork, Halt,
                      MergedResponse, ObserverRegistry, ReplaceCall,
                      SkipInstruction)

log = logging.getLogger(__name__)

PAGE_SIZE = 4096
PAGE_MASK = PAGE_SIZE - 1


class SimError(RuntimeError):
    pass


class Fault(SimError):
    def __init__(self, kind: str, address: int, pc: int):
        super().__init__(f"{kind} at address 0x{address:x} (pc 0x{pc:x})")
        self.kind = kind
        self.address = address
        self.pc = pc


# ---------------------------------------------------------------------------
# Execution modes
# ---------------------------------------------------------------------------

@dataclass
class ConcreteMode:
    kind: str = "concrete"
    fills_unmapped: bool = False


@dataclass
class ForcedMode:
    """Concrete semantics, but branches at the listed sites are flipped."""
    flip_sites: frozenset[int] = frozenset()
    kind: str = "forced"
    fills_unmapped: bool = False


@dataclass
class MicroMode:
    """Unmapped accesses map the page and fill it by policy."""
    fill: str = "zeros"          # zeros | constant | random
    fill_byte: int = 0
    seed: int = 0
    kind: str = "micro"
    fills_unmapped: bool = True


@dataclass
class FloodMode:
    """Micro-execution plus bounded both-direction branch exploration."""
    k: int = 3
    op_budget: int = 1_000_000
    fill: str = "zeros"
    fill_byte: int = 0
    seed: int = 0
    kind: str = "flood"
    fills_unmapped: bool = True


@dataclass
class ConcolicMode:
    """Concrete execution with selected regions shadowed symbolically."""
    symbolic_regions: tuple[tuple[int, int], ...] = ()
    kind: str = "concolic"
    fills_unmapped: bool = False


def make_fill(mode) -> Callable[[int], bytearray]:
    if mode.fill == "zeros":
        return lambda base: bytearray(PAGE_SIZE)
    if mode.fill == "constant":
        byte = mode.fill_byte & 0xFF
        return lambda base: bytearray([byte]) * PAGE_SIZE
    if mode.fill == "random":
        seed = mode.seed

        def fill(base: int) -> bytearray:
            out = bytearray()
            counter = 0
            while len(out) < PAGE_SIZE:
                h = hashlib.sha256(
                    f"{seed}:{base}:{counter}".encode()).digest()
                out.extend(h)
                counter += 1
            return out[:PAGE_SIZE]
        return fill
    raise ValueError(f"unknown fill policy {mode.fill!r}")


# ---------------------------------------------------------------------------
# Machine state
# ---------------------------------------------------------------------------

class MachineState:
    """Sparse paged RAM, a register file, and instruction-scoped temps."""

    def __init__(self, spec: ProcessorSpec):
        self.spec = spec
        self.ram: dict[int, bytearray] = {}
        self.register_file = bytearray(spec.register_space.extent_bytes)
        self.temporaries = bytearray(spec.spaces.temp.extent_bytes)
        self.pc = 0
        self.halted = False

    # --- loading / lifting interface ---
    def load_image(self, data: bytes, base: int) -> None:
        for i, b in enumerate(data):
            addr = base + i
            page = self.ram.setdefault(addr & ~PAGE_MASK,
                                       bytearray(PAGE_SIZE))
            page[addr & PAGE_MASK] = b

    def is_mapped(self, address: int) -> bool:
        return (address & ~PAGE_MASK) in self.ram

    def map_page(self, address: int, data: Optional[bytearray] = None):
        base = address & ~PAGE_MASK
        if base not in self.ram:
            self.ram[base] = data if data is not None else bytearray(
                PAGE_SIZE)
        return self.ram[base]

    def read_bytes(self, address: int, n: int) -> bytes:
        """Best-effort read for the lifter; stops at the first unmapped
        page."""
        out = bytearray()
        addr = address
        while len(out) < n:
            page = self.ram.get(addr & ~PAGE_MASK)
            if page is None:
                break
            take = min(n - len(out), PAGE_SIZE - (addr & PAGE_MASK))
            off = addr & PAGE_MASK
            out.extend(page[off:off + take])
            addr += take
        return bytes(out)

    def copy(self) -> "MachineState":
        new = MachineState.__new__(MachineState)
        new.spec = self.spec
        new.ram = {base: bytearray(page) for base, page in self.ram.items()}
        new.register_file = bytearray(self.register_file)
        new.temporaries = bytearray(self.temporaries)
        new.pc = self.pc
        new.halted = self.halted
        return new


@dataclass
class Snapshot:
    """Deep copy of machine state plus attachment and mode state blobs."""
    machine: MachineState
    pc: int
    blobs: dict[int, object]


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------

@dataclass
class StopReason:
    kind: str                 # halt | address | budget | fault | decode_error
    pc: int
    detail: str = ""


class Simulator:
    """One rehosted firmware instance."""

    def __init__(self, spec: ProcessorSpec, mode=None, cache=None,
                 optimize: bool = True, name: str = "sim"):
        from .cache import LiftCache
        self.spec = spec
        self.name = name
        self.mode = mode or ConcreteMode()
        self.cache = cache if cache is not None else LiftCache()
        self.optimize = optimize
        self.state = MachineState(spec)
        self.observers = ObserverRegistry()
        self.intrinsics: dict[str, Callable] = {}
        self.call_handlers: dict[str, Callable] = {}
        self.interrupts = None          # set by interrupts.attach_controller
        self.boundary_hooks: list[Callable] = []
        self.op_count = 0
        self.pending_forks: list[Simulator] = []
        self.stateful: list = []        # snapshot/restore participants
        self.diagnostics: list[str] = []

        self._fill = make_fill(self.mode) if self.mode.fills_unmapped else None
        self._endian = spec.endianness
        self._const_space = spec.spaces.const.id
        self._reg_space = spec.register_space.id
        self._temp_space = spec.spaces.temp.id
        self._ram_kinds = {s.id: s.kind for s in spec.spaces}
        self._pc_vn = spec.pc
        self._block = None
        self._index = 0
        self._pc_blocks: dict[int, object] = {}
        self._obs_generation = -1
        self._cmp_prov: dict[tuple, CompareRecord] = {}
        self._touched_memory = False
        self._addr_override: Optional[tuple[object, int]] = None
        self.tracker = None             # data-flow tracker hook
        self._forced_flip_once: Optional[bool] = None
        self._flood_hook: Optional[Callable] = None

    # ------------------------------------------------------------------
    # configuration
    # ------------------------------------------------------------------

    def load_image(self, data: bytes, base: int, entry: Optional[int] = None):
        self.state.load_image(data, base)
        if entry is not None:
            self.state.pc = entry
            self.write_varnode(self._pc_vn, entry)

    def register_intrinsic(self, name: str, handler: Callable):
        self.intrinsics[name] = handler

    def register_call_handler(self, handler_id: str, handler: Callable):
        self.call_handlers[handler_id] = handler

    def add_stateful(self, obj) -> None:
        self.stateful.append(obj)

    def set_address_override(self, payload, window_instructions: int):
        """Install an address-translation override consumed by the next
        `window_instructions` memory-touching instructions."""
        self._addr_override = (payload, window_instructions)

    def address_override(self):
        return self._addr_override[0] if self._addr_override else None

    # ------------------------------------------------------------------
    # varnode access
    # ------------------------------------------------------------------

    def read_varnode(self, vn: VarNode) -> int:
        space = vn.space
        if space == self._const_space:
            return vn.offset
        if space == self._reg_space:
            raw = self.state.register_file[vn.offset:vn.offset + vn.size]
        elif space == self._temp_space:
            raw = self.state.temporaries[vn.offset:vn.offset + vn.size]
        else:
            return self.read_mem(vn.offset, vn.size)
        return int.from_bytes(raw, self._endian)

    def write_varnode(self, vn: VarNode, value: int) -> None:
        data = (value & bitops.mask(vn.size)).to_bytes(vn.size, self._endian)
        space = vn.space
        if space == self._reg_space:
            self.state.register_file[vn.offset:vn.offset + vn.size] = data
        elif space == self._temp_space:
            self.state.temporaries[vn.offset:vn.offset + vn.size] = data
        elif space == self._const_space:
            raise SimError("write to constant space")
        else:
            self.write_mem(vn.offset, vn.size, value)

    # ------------------------------------------------------------------
    # memory access
    # ------------------------------------------------------------------

    def _page(self, address: int, writing: bool):
        base = address & ~PAGE_MASK
        page = self.state.ram.get(base)
        if page is None:
            if self._fill is not None:
                page = self._fill(base)
                self.state.ram[base] = page
            else:
                raise Fault("unmapped_write" if writing else "unmapped_read",
                            address, self.state.pc)
        return page

    def read_mem(self, address: int, size: int) -> int:
        out = bytearray(size)
        for i in range(size):
            page = self._page(address + i, writing=False)
            out[i] = page[(address + i) & PAGE_MASK]
        return int.from_bytes(out, self._endian)

    def write_mem(self, address: int, size: int, value: int) -> None:
        data = (value & bitops.mask(size)).to_bytes(size, self._endian)
        for i in range(size):
            page = self._page(address + i, writing=True)
            page[(address + i) & PAGE_MASK] = data[i]

    # ------------------------------------------------------------------
    # event helpers
    # ------------------------------------------------------------------

    def _dispatch(self, event: Event) -> MergedResponse:
        return self.observers.dispatch(event)

    def _read_event(self, vn: VarNode, value: int, address=None) -> int:
        """Fire read events for one operand; returns the (possibly
        overridden) value."""
        obs = self.observers
        pc = self.state.pc
        kind_specific = None
        if address is not None:
            kind_specific = "memory_read"
        elif vn.space == self._reg_space:
            kind_specific = "register_read"
        for kind in (kind_specific, "operand_read"):
            if kind is None or not obs.wants(kind):
                continue
            ev = Event(kind, pc, address=address, varnode=vn, value=value,
                       width=vn.size)
            merged = self._dispatch(ev)
            if merged.override is not None:
                value = int.from_bytes(merged.override, self._endian)
        return value

    def _write_event(self, vn: VarNode, value: int, address=None) -> int:
        obs = self.observers
        pc = self.state.pc
        kind_specific = None
        if address is not None:
            kind_specific = "memory_write"
        elif vn.space == self._reg_space:
            kind_specific = "register_write"
        for kind in (kind_specific, "operand_write"):
            if kind is None or not obs.wants(kind):
                continue
            ev = Event(kind, pc, address=address, varnode=vn, value=value,
                       width=vn.size)
            merged = self._dispatch(ev)
            if merged.override is not None:
                value = int.from_bytes(merged.override, self._endian)
        return value

    # ------------------------------------------------------------------
    # compare provenance (comparison splitting support)
    # ------------------------------------------------------------------

    def _prov_invalidate(self, vn: VarNode):
        if not self._cmp_prov:
            return
        stale = [key for key in self._cmp_prov
                 if VarNode(*key).overlaps(vn)]
        for key in stale:
            del self._cmp_prov[key]

    def _prov_key(self, vn: VarNode):
        return (vn.space, vn.offset, vn.size)

    # ------------------------------------------------------------------
    # instruction fetch/execute
    # ------------------------------------------------------------------

    def _protection(self) -> tuple[frozenset, str]:
        """Registers the runtime must keep faithful at instruction
        boundaries.

        The executor protects the whole register file: interrupts,
        snapshots, and observers may read any register between two
        instructions, so only temporaries may be removed from runtime
        blocks (expressions still simplify).  The unprotected pipeline
        (`optimize_block` with no `protected` argument) is the offline
        form the reduction metrics measure.
        """
        space = self.spec.register_space
        protected = frozenset(
            (space.id, i) for i in range(space.extent_bytes))
        return protected, "faithful-registers"

    def _fetch_instruction(self, pc: int):
        block = self._block
        if (block is not None and self._index < len(block.instructions)
                and block.instructions[self._index].address == pc):
            return block.instructions[self._index]
        # per-simulator hot cache keyed by address; firmware is assumed not
        # to rewrite its own code (self-modifying code is out of scope)
        if self._obs_generation != self.observers.generation:
            self._pc_blocks = {}
            self._obs_generation = self.observers.generation
        block = self._pc_blocks.get(pc)
        if block is None:
            protected, salt = self._protection()

            def optimizer_fn(blk, spec, _protected=protected):
                from .optimizer import optimize_block
                return optimize_block(blk, spec, protected=_protected)

            block = lift_block(self.spec, self.state, pc,
                               optimize=self.optimize, cache=self.cache,
                               optimizer_fn=optimizer_fn, cache_salt=salt)
            if not block.instructions:
                raise SimError(
                    f"cannot lift at pc 0x{pc:x}: "
                    + "; ".join(block.diagnostics or ("no bytes",)))
            self._pc_blocks[pc] = block
        self._block = block
        self._index = 0
        return block.instructions[0]

    def step_instruction(self):
        """Lift (via the cache) and execute one architectural instruction."""
        state = self.state
        if state.halted:
            return None
        if self.interrupts is not None:
            self.interrupts.dispatch_pending(self)
        for hook in self.boundary_hooks:
            hook(self)
        pc = state.pc
        insn = self._fetch_instruction(pc)

        if self.observers.wants("architectural_step"):
            merged = self._dispatch(Event("architectural_step", pc,
                                          instruction=insn))
            if merged.control is SkipInstruction:
                self._advance(pc + insn.length_bytes)
                return insn
            if merged.control is Halt:
                state.halted = True
                return insn

        state.temporaries[:] = b"\x00" * len(state.temporaries)
        self._touched_memory = False
        # architecturally visible PC points at the next instruction
        self.write_varnode(self._pc_vn, pc + insn.length_bytes)
        next_pc = self._execute_ops(insn)
        if next_pc is None:
            next_pc = self.read_varnode(self._pc_vn)
        if self._addr_override is not None and self._touched_memory:
            payload, window = self._addr_override
            window -= 1
            self._addr_override = (payload, window) if window > 0 else None
        self._advance(next_pc)
        return insn

    def _advance(self, next_pc: int):
        self.state.pc = next_pc
        self.write_varnode(self._pc_vn, next_pc)
        block = self._block
        if block is not None:
            self._index += 1
            if (self._index >= len(block.instructions)
                    or block.instructions[self._index].address != next_pc):
                self._block = None

    def _execute_ops(self, insn) -> Optional[int]:
        """Interpret the op list of one instruction; returns the
        inter-instruction branch target, if any op transferred control."""
        ops = insn.ops
        index = 0
        count = len(ops)
        state = self.state
        obs = self.observers
        tracker = self.tracker
        while index < count:
            op = ops[index]
            self.op_count += 1
            if obs.wants("operation_step"):
                self._dispatch(Event("operation_step", state.pc, op=op))
            opcode = op.opcode
            index += 1

            if opcode == "COPY":
                src = op.inputs[0]
                value = self.read_varnode(src)
                value = self._read_event(src, value)
                value &= bitops.mask(op.output.size)
                self._store_result(op, value, propagate_from=src)
                if tracker is not None:
                    tracker.on_copy(self, src, op.output)
            elif opcode in bitops.BINARY_SAME_WIDTH:
                a, b = op.inputs
                va = self._read_event(a, self.read_varnode(a))
                vb = self._read_event(b, self.read_varnode(b))
                value = bitops.BINARY_SAME_WIDTH[opcode](va, vb, a.size)
                self._store_result(op, value)
                if tracker is not None:
                    tracker.on_op(self, op, (va, vb), value)
            elif opcode in bitops.COMPARISONS:
                a, b = op.inputs
                va = self._read_event(a, self.read_varnode(a))
                vb = self._read_event(b, self.read_varnode(b))
                value = bitops.COMPARISONS[opcode](va, vb, a.size)
                self._store_result(op, value)
                if opcode in ("INT_EQUAL", "INT_NOTEQUAL") and a.size > 1:
                    self._cmp_prov[self._prov_key(op.output)] = CompareRecord(
                        state.pc, va, vb, a.size)
                if tracker is not None:
                    tracker.on_op(self, op, (va, vb), value)
            elif opcode in bitops.RESIZES:
                src = op.inputs[0]
                va = self._read_event(src, self.read_varnode(src))
                value = bitops.RESIZES[opcode](va, src.size, op.output.size)
                self._store_result(op, value)
                if tracker is not None:
                    tracker.on_op(self, op, (va,), value)
            elif opcode == "BOOL_NOT":
                src = op.inputs[0]
                va = self._read_event(src, self.read_varnode(src))
                value = bitops.bool_not(va, src.size)
                self._store_result(op, value, propagate_from=src)
                if tracker is not None:
                    tracker.on_op(self, op, (va,), value)
            elif opcode == "LOAD":
                value = self._do_load(op)
                if tracker is not None:
                    tracker.on_load(self, op, value)
            elif opcode == "STORE":
                self._do_store(op)
            elif opcode == "BRANCH":
                target = op.inputs[0]
                if target.space == self._const_space:
                    index = target.offset
                    continue
                return target.offset
            elif opcode == "CBRANCH":
                target, cond_vn = op.inputs
                cond = self._read_event(cond_vn, self.read_varnode(cond_vn))
                taken = self._cbranch_decision(op, cond_vn, cond, target)
                if taken:
                    if target.space == self._const_space:
                        index = target.offset
                        continue
                    return target.offset
            elif opcode == "IBRANCH" or opcode == "RETURN":
                vn = op.inputs[0]
                value = self._read_event(vn, self.read_varnode(vn))
                if opcode == "RETURN" and self.interrupts is not None:
                    redirected = self.interrupts.on_return_target(self, value)
                    if redirected is not None:
                        return redirected
                return value
            elif opcode == "CALL" or opcode == "ICALL":
                vn = op.inputs[0]
                if opcode == "CALL":
                    target = vn.offset
                else:
                    target = self._read_event(vn, self.read_varnode(vn))
                if obs.wants("call"):
                    merged = self._dispatch(Event("call", state.pc,
                                                  target=target))
                    if isinstance(merged.control, ReplaceCall):
                        handler = self.call_handlers.get(
                            merged.control.handler_id)
                        if handler is None:
                            raise SimError("no call handler: "
                                           f"{merged.control.handler_id}")
                        handler(self)
                        return self.read_varnode(self._pc_vn)
                    if merged.control is Halt:
                        state.halted = True
                        return state.pc
                return target
            elif opcode == "INTRINSIC":
                self._do_intrinsic(op)
                if state.halted:
                    return state.pc
            elif opcode == "HALT":
                state.halted = True
                return state.pc
            else:  # pragma: no cover - opcode set is closed
                raise SimError(f"cannot interpret opcode {opcode}")
        return None

    def _cbranch_decision(self, op, cond_vn, cond, target) -> bool:
        taken = cond != 0
        flip = False
        mode = self.mode
        if mode.kind == "forced" and self.state.pc in mode.flip_sites:
            flip = True
        if self._forced_flip_once is not None:
            taken = self._forced_flip_once
            self._forced_flip_once = None
            flip = False
        compare = None
        if self.observers.wants("cbranch"):
            compare = self._cmp_prov.get(self._prov_key(cond_vn))
            merged = self._dispatch(Event(
                "cbranch", self.state.pc, condition=cond,
                target=(target.offset
                        if target.space != self._const_space else None),
                compare=compare))
            if merged.control is FlipBranch:
                flip = not flip
            elif merged.control is Halt:
                self.state.halted = True
            elif merged.control is Fork:
                self.pending_forks.append(self.fork())
        if self.tracker is not None:
            self.tracker.on_cbranch(self, cond_vn, cond, taken ^ flip)
        if (self._flood_hook is not None
                and target.space != self._const_space):
            # flood explores the instruction-level CFG only; branches that
            # stay inside one instruction keep their natural direction
            return self._flood_hook(self, cond, taken ^ flip)
        return taken ^ flip

    def _store_result(self, op, value: int, propagate_from=None):
        out = op.output
        value = self._write_event(out, value)
        self.write_varnode(out, value)
        if propagate_from is not None:
            prov = self._cmp_prov.get(self._prov_key(propagate_from))
            self._prov_invalidate(out)
            if prov is not None:
                self._cmp_prov[self._prov_key(out)] = prov
        else:
            self._prov_invalidate(out)

    def _do_load(self, op) -> int:
        space = self.spec.spaces.by_id[op.inputs[0].offset]
        addr_vn = op.inputs[1]
        addr = self._read_event(addr_vn, self.read_varnode(addr_vn))
        out = op.output
        if space.kind == "ram":
            self._touched_memory = True
            value = self.read_mem(addr, out.size)
            value = self._read_event(
                VarNode(space.id, addr, out.size), value, address=addr)
        elif space.kind == "register":
            reg_vn = VarNode(space.id, addr, out.size)
            value = self.read_varnode(reg_vn)
            value = self._read_event(reg_vn, value)
        else:
            value = int.from_bytes(
                self.state.temporaries[addr:addr + out.size], self._endian)
        value &= bitops.mask(out.size)
        out_value = self._write_event(out, value)
        self.write_varnode(out, out_value)
        self._prov_invalidate(out)
        return out_value

    def _do_store(self, op) -> None:
        space = self.spec.spaces.by_id[op.inputs[0].offset]
        addr_vn, value_vn = op.inputs[1], op.inputs[2]
        addr = self._read_event(addr_vn, self.read_varnode(addr_vn))
        value = self._read_event(value_vn, self.read_varnode(value_vn))
        if space.kind == "ram":
            self._touched_memory = True
            value = self._write_event(
                VarNode(space.id, addr, value_vn.size), value, address=addr)
            self.write_mem(addr, value_vn.size, value)
        elif space.kind == "register":
            reg_vn = VarNode(space.id, addr, value_vn.size)
            value = self._write_event(reg_vn, value)
            self.write_varnode(reg_vn, value)
            self._prov_invalidate(reg_vn)
        else:
            self.state.temporaries[addr:addr + value_vn.size] = (
                value & bitops.mask(value_vn.size)).to_bytes(
                    value_vn.size, self._endian)
        if self.tracker is not None:
            self.tracker.on_store(self, op, addr, value)

    def _do_intrinsic(self, op) -> None:
        handler = self.intrinsics.get(op.intrinsic_name)
        if handler is None:
            raise SimError(f"no handler: {op.intrinsic_name}")
        args = [self._read_event(vn, self.read_varnode(vn))
                for vn in op.inputs]
        result = handler(self, args)
        if op.output is not None:
            if result is None:
                raise SimError(
                    f"intrinsic {op.intrinsic_name} returned no value")
            self.write_varnode(op.output, result)
            self._prov_invalidate(op.output)
        if self.tracker is not None:
            self.tracker.on_intrinsic(self, op)

    # ------------------------------------------------------------------
    # running
    # ------------------------------------------------------------------

    def run(self, *, stop_addresses=(), op_budget: Optional[int] = None,
            instruction_budget: Optional[int] = None) -> StopReason:
        """Step instructions until halt, a stop address, or budget."""
        stops = frozenset(stop_addresses)
        start_ops = self.op_count
        steps = 0
        while True:
            if self.state.halted:
                return StopReason("halt", self.state.pc)
            if self.state.pc in stops:
                return StopReason("address", self.state.pc)
            if op_budget is not None and self.op_count - start_ops >= op_budget:
                return StopReason("budget", self.state.pc)
            if instruction_budget is not None and steps >= instruction_budget:
                return StopReason("budget", self.state.pc)
            try:
                self.step_instruction()
            except Fault as e:
                return StopReason("fault", self.state.pc, str(e))
            except SimError as e:
                return StopReason("decode_error", self.state.pc, str(e))
            steps += 1

    # ------------------------------------------------------------------
    # snapshot / fork
    # ------------------------------------------------------------------

    def snapshot(self) -> Snapshot:
        blobs = {}
        for i, obj in enumerate(self.stateful):
            blobs[i] = copy.deepcopy(obj.snapshot_state())
        return Snapshot(self.state.copy(), self.state.pc, blobs)

    def restore(self, snap: Snapshot) -> None:
        self.state = snap.machine.copy()
        self.state.pc = snap.pc
        for i, obj in enumerate(self.stateful):
            if i in snap.blobs:
                obj.restore_state(copy.deepcopy(snap.blobs[i]))
        self._block = None
        self._cmp_prov.clear()
        self._addr_override = None

    def fork(self) -> "Simulator":
        """New simulator sharing spec and cache, with deep-copied state."""
        child = Simulator.__new__(Simulator)
        child.__dict__.update(self.__dict__)
        child.state = self.state.copy()
        child.observers = self.observers.clone_for_fork()
        child.pending_forks = []
        child.boundary_hooks = list(self.boundary_hooks)
        child.stateful = []
        child.diagnostics = []
        child._cmp_prov = dict(self._cmp_prov)
        child._block = None
        child._index = 0
        child._forced_flip_once = None
        # stateful attachments (peripherals, interrupts) re-bind via their
        # own fork hooks; interrupts are deep-copied wholesale
        child.interrupts = copy.deepcopy(self.interrupts)
        for obj in self.stateful:
            clone_hook = getattr(obj, "clone_for_fork", None)
            child.stateful.append(clone_hook() if clone_hook else obj)
        if self.tracker is not None:
            clone_hook = getattr(self.tracker, "clone_for_fork", None)
            child.tracker = clone_hook() if clone_hook else None
        return child


# ---------------------------------------------------------------------------
# Flood exploration
# ---------------------------------------------------------------------------

@dataclass
class FloodResult:
    visited: set                     # (site pc, direction) pairs
    paths: int
    ops: int
    events: list = field(default_factory=list)


def flood_explore(sim: Simulator, roots, k: int = 3,
                  op_budget: int = 1_000_000,
                  path_op_budget: int = 50_000) -> FloodResult:
    """Boundedly explore both directions of every conditional branch.

    FIFO worklist of forked states; at each branch site the not-taken
    direction is enqueued while its per-(site, direction) visit count is
    below `k`.  Unsatisfiable directions are taken regardless (forced
    semantics); unmapped accesses follow the micro fill policy.
    """
    visited: set = set()
    counts: dict = {}
    result = FloodResult(visited, 0, 0)
    work: deque = deque()

    for root in roots:
        child = sim.fork()
        child.state.pc = root
        child.write_varnode(child._pc_vn, root)
        work.append((child, None))

    while work and result.ops < op_budget:
        child, forced = work.popleft()
        result.paths += 1
        child._forced_flip_once = None

        def controller(csim, cond, natural, _forced=forced):
            site = csim.state.pc
            nonlocal_first = controller.first
            controller.first = False
            if nonlocal_first and _forced is not None:
                # direction was reserved at enqueue time
                want = _forced
            else:
                want = natural
                if counts.get((site, want), 0) >= k:
                    other = not want
                    if counts.get((site, other), 0) >= k:
                        csim.state.halted = True
                        return want
                    want = other
                counts[(site, want)] = counts.get((site, want), 0) + 1
            visited.add((site, want))
            other = not want
            if counts.get((site, other), 0) < k:
                counts[(site, other)] = counts.get((site, other), 0) + 1
                forked = csim.fork()
                forked._forced_flip_once = None
                work.append((forked, other))
            return want

        controller.first = True
        child._flood_hook = controller
        before = child.op_count
        try:
            child.run(op_budget=min(path_op_budget,
                                    op_budget - result.ops))
        except SimError as e:
            child.diagnostics.append(str(e))
        result.ops += child.op_count - before
        child._flood_hook = None
    return result
