"""Specification-driven interrupt controller.

Tracks per-line enabled and pending flags, dispatches the highest-priority
pending line at architectural instruction boundaries (never between the IL
operations of one instruction), saves the configured context into
controller-private storage, and restores it when the firmware returns.

Two return triggers are supported: an intrinsic name (an `rte`-style
instruction whose semantics invoke the intrinsic) and a return-address
sentinel (dispatch parks the sentinel in the ISA's link register; the
firmware's ordinary return instruction then surfaces it).  For transparency
the controller also saves and restores the link register it clobbers in
sentinel mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .machine import SimError, Simulator

log = logging.getLogger(__name__)

DEFAULT_SENTINEL = 0xFFFFFFF0


@dataclass
class InterruptSpec:
    id: int
    priority: int                       # lower value = more urgent
    vector: Optional[int] = None        # firmware handler address
    handler: Optional[Callable] = None  # in-framework override
    save: tuple[str, ...] = ()          # register names
    save_memory: tuple[tuple[int, int], ...] = ()  # (address, size) ranges
    return_intrinsic: Optional[str] = None
    sentinel: Optional[int] = None      # return-address sentinel
    link_register: Optional[str] = None  # clobbered to hold the sentinel

    def __post_init__(self):
        if self.vector is None and self.handler is None:
            raise ValueError(f"interrupt {self.id}: needs vector or handler")
        if self.vector is not None and not (self.save or self.save_memory):
            raise ValueError(
                f"interrupt {self.id}: a firmware vector needs a save list")


@dataclass
class _Frame:
    spec_id: int
    registers: list[tuple[str, int]]
    memory: list[tuple[int, bytes]]
    link_value: Optional[int] = None


class InterruptController:
    def __init__(self):
        self.specs: dict[int, InterruptSpec] = {}
        self.enabled: dict[int, bool] = {}
        self.pending: dict[int, bool] = {}
        self.stack: list[_Frame] = []
        self.dispatch_count = 0

    # -- configuration ---------------------------------------------------

    def configure(self, spec: InterruptSpec) -> None:
        if spec.id in self.specs:
            raise ValueError(f"interrupt id {spec.id} already configured")
        self.specs[spec.id] = spec
        self.enabled[spec.id] = False
        self.pending[spec.id] = False

    def attach(self, sim: Simulator) -> None:
        sim.interrupts = self
        for spec in self.specs.values():
            if spec.return_intrinsic:
                sim.register_intrinsic(spec.return_intrinsic,
                                       self._rte_intrinsic)

    def set_enabled(self, line_id: int, value: bool) -> None:
        self._known(line_id)
        self.enabled[line_id] = value

    def raise_(self, line_id: int) -> None:
        """Mark a line pending; raising an already-pending line coalesces."""
        self._known(line_id)
        self.pending[line_id] = True

    def _known(self, line_id: int) -> None:
        if line_id not in self.specs:
            raise KeyError(f"unknown interrupt id {line_id}")

    # -- dispatch ----------------------------------------------------------

    def dispatch_pending(self, sim: Simulator) -> Optional[int]:
        """Called by the executor at each instruction boundary."""
        ready = [line_id for line_id in self.specs
                 if self.pending[line_id] and self.enabled[line_id]]
        if not ready:
            return None
        ready.sort(key=lambda i: (self.specs[i].priority, i))
        line_id = ready[0]
        spec = self.specs[line_id]
        self.pending[line_id] = False
        self.dispatch_count += 1
        if spec.handler is not None:
            spec.handler(sim)
            return line_id

        frame = _Frame(line_id, [], [])
        for name in spec.save:
            frame.registers.append(
                (name, sim.read_varnode(sim.spec.registers[name])))
        for address, size in spec.save_memory:
            frame.memory.append(
                (address, sim.state.read_bytes(address, size)))
        if spec.sentinel is not None:
            link = spec.link_register or "R15"
            frame.link_value = sim.read_varnode(sim.spec.registers[link])
            sim.write_varnode(sim.spec.registers[link], spec.sentinel)
        self.stack.append(frame)
        sim.state.pc = spec.vector
        sim.write_varnode(sim.spec.pc, spec.vector)
        sim._block = None
        return line_id

    # -- returns -----------------------------------------------------------

    def on_return_target(self, sim: Simulator,
                         value: int) -> Optional[int]:
        """Executor hook: a RETURN whose target is a configured sentinel
        unwinds the top frame instead of jumping to the sentinel."""
        for spec in self.specs.values():
            if spec.sentinel is not None and value == spec.sentinel:
                return self.return_from_interrupt(sim)
        return None

    def _rte_intrinsic(self, sim: Simulator, _args) -> None:
        self.return_from_interrupt(sim)

    def return_from_interrupt(self, sim: Simulator) -> int:
        """Pop and restore the most recent frame (reverse order); the
        restored PC lands in the PC register so execution resumes there."""
        if not self.stack:
            raise SimError("interrupt underflow: return with empty stack")
        frame = self.stack.pop()
        spec = self.specs[frame.spec_id]
        for address, data in reversed(frame.memory):
            for i, b in enumerate(data):
                sim.write_mem(address + i, 1, b)
        for name, value in reversed(frame.registers):
            sim.write_varnode(sim.spec.registers[name], value)
        if frame.link_value is not None:
            link = spec.link_register or "R15"
            sim.write_varnode(sim.spec.registers[link], frame.link_value)
        pc = sim.read_varnode(sim.spec.pc)
        sim.state.pc = pc
        sim._block = None
        return pc

    @property
    def depth(self) -> int:
        return len(self.stack)
