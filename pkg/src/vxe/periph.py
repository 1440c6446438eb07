"""Peripheral support in three tiers.

Tier one: an automatic check solver that watches loads from configured MMIO
ranges, tracks the data flow of each value into branch conditions, detects
re-entry into the polling loop, and injects a solver-computed value so the
loop exits.  Tier two: universal models configured declaratively with
(address, width, bitmask, direction, handler) mappings -- a compare-and-match
timer and a FIFO frame stream (CAN-style) are provided.  Tier three is plain
observers; anything is possible there.
"""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import symsolve
from .concolic import ExprTracker
from .machine import PAGE_MASK, Simulator
from .observe import Event, ObserverRegistration, OverrideValue
from .symsolve import Constraint, SymExpr

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Tier 1: peripheral check solver
# ---------------------------------------------------------------------------

@dataclass
class CheckSolverConfig:
    ranges: list[tuple[int, int]]          # inclusive [lo, hi] intervals
    reentry_window: int = 4096             # architectural instructions
    max_tracked_reads: int = 64
    external_command: Optional[list[str]] = None

    def __post_init__(self):
        _validate_ranges(self.ranges)


def _validate_ranges(ranges) -> None:
    if not ranges:
        raise ValueError("check solver needs at least one MMIO range")
    ordered = sorted(ranges)
    for (lo, hi), (lo2, hi2) in zip(ordered, ordered[1:]):
        if lo2 <= hi:
            raise ValueError(f"MMIO ranges overlap: "
                             f"[{lo:#x},{hi:#x}] and [{lo2:#x},{hi2:#x}]")
    for lo, hi in ranges:
        if lo > hi:
            raise ValueError(f"empty MMIO range [{lo:#x},{hi:#x}]")


@dataclass
class CheckSite:
    """One watched polling read: Idle -> Tracked -> AtBranch -> Reenter."""
    read_pc: int
    address: int
    size: int
    state: str = "Tracked"
    var_ids: set[int] = field(default_factory=set)
    branch_expr: Optional[SymExpr] = None
    loop_cond_value: int = 0
    at_branch_instr: int = 0
    solves: int = 0


class CheckSolver:
    """Bypasses stall loops on MMIO status registers.

    Reads in range are symbolized with a concrete shadow of zero; when the
    branch that consumed the value loops back to the same read site within
    the re-entry window (with no intervening firmware write to the tracked
    address), the negated loop condition is solved and the next read is
    answered with the satisfying value.  Values are injected for one read
    only; each loop entry re-solves.
    """

    def __init__(self, sim: Simulator, config: CheckSolverConfig):
        self.sim = sim
        self.config = config
        self.sites: dict[tuple[int, int], CheckSite] = {}
        self.instr_count = 0
        self.diagnostics: list[str] = []
        self.bypasses = 0
        self._last_var_site: dict[int, tuple] = {}
        self.tracker = ExprTracker(on_branch=self._on_branch,
                                   watch_read=self._in_range)
        self.tracker.fresh_var_hook = self._fresh_var
        self._pending_read_pc = None
        sim.tracker = self.tracker
        for lo, hi in config.ranges:
            self._map_range(lo, hi)

    def _map_range(self, lo: int, hi: int) -> None:
        addr = lo & ~PAGE_MASK
        while addr <= hi:
            self.sim.state.map_page(addr)
            addr += PAGE_MASK + 1

    def _in_range(self, addr: int, size: int) -> bool:
        return any(lo <= addr and addr + size - 1 <= hi
                   for lo, hi in self.config.ranges)

    def attach(self) -> int:
        reg = ObserverRegistration(kinds=frozenset(
            {"memory_read", "memory_write", "architectural_step"}))
        return self.sim.observers.attach(reg, self._on_event)

    def widen_ranges(self, new_ranges) -> None:
        """Live reconfiguration; wider ranges start tracking immediately."""
        merged = list(self.config.ranges) + list(new_ranges)
        _validate_ranges(merged)
        self.config.ranges = merged
        for lo, hi in new_ranges:
            self._map_range(lo, hi)

    # -- tracker callbacks ---------------------------------------------

    def _fresh_var(self, var_id: int, addr: int, size: int) -> None:
        pc = self.sim.state.pc
        key = (pc, addr)
        site = self.sites.get(key)
        if site is None:
            if len(self.sites) >= self.config.max_tracked_reads:
                self.diagnostics.append(
                    f"tracked-read limit hit; ignoring site pc={pc:#x}")
                return
            site = CheckSite(pc, addr, size)
            self.sites[key] = site
        site.state = "Tracked"
        site.size = size
        site.var_ids.add(var_id)
        self._last_var_site[var_id] = key

    def _on_branch(self, sim, expr: SymExpr, value: int,
                   taken: bool) -> None:
        for var_id in expr.free_vars():
            key = self._last_var_site.get(var_id)
            if key is None:
                continue
            site = self.sites.get(key)
            if site is None or site.state not in ("Tracked", "AtBranch"):
                continue
            site.state = "AtBranch"
            site.branch_expr = expr
            site.loop_cond_value = value
            site.at_branch_instr = self.instr_count

    # -- observer ------------------------------------------------------

    def _on_event(self, event: Event):
        if event.kind == "architectural_step":
            self.instr_count += 1
            return None
        if event.kind == "memory_write":
            if self._in_range(event.address, event.width or 1):
                for key, site in self.sites.items():
                    if key[1] == event.address:
                        site.state = "Idle"
                        site.var_ids.clear()
            return None
        # memory_read
        if not self._in_range(event.address, event.width or 1):
            return None
        site = self.sites.get((event.pc, event.address))
        if site is None or site.state != "AtBranch":
            return None
        if (self.instr_count - site.at_branch_instr
                > self.config.reentry_window):
            site.state = "Idle"
            site.var_ids.clear()
            return None
        return self._reenter(site)

    def _reenter(self, site: CheckSite) -> Optional[OverrideValue]:
        constraint = Constraint(site.branch_expr)
        if site.loop_cond_value != 0:
            constraint = symsolve.negate(constraint)
        result = symsolve.solve([constraint], self.config.external_command)
        site.solves += 1
        if not result.is_sat:
            self.diagnostics.append(
                f"solver {result.status} for loop at pc={site.read_pc:#x}"
                + (f" ({result.reason})" if result.reason else ""))
            site.state = "Idle"
            site.var_ids.clear()
            return None
        value = 0
        for var_id in site.var_ids:
            if var_id in result.assignment:
                value = result.assignment[var_id]
        # exit condition must hold on the injected value (post-condition)
        shadow = {v: value for v in site.var_ids}
        if symsolve.eval_expr(site.branch_expr, shadow) == (
                site.loop_cond_value and 1):
            self.diagnostics.append(
                f"injected value fails recheck at pc={site.read_pc:#x}")
            return None
        self.bypasses += 1
        site.state = "Idle"
        site.var_ids.clear()
        self.tracker.exprs.clear()
        return OverrideValue(
            value.to_bytes(site.size, self.sim.spec.endianness))


def check_solver_attach(sim: Simulator,
                        config: CheckSolverConfig) -> CheckSolver:
    solver = CheckSolver(sim, config)
    solver.attach()
    return solver


# ---------------------------------------------------------------------------
# Tier 2: universal peripheral backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mapping:
    address: int
    width: int
    bitmask: int
    direction: str                    # "read" | "write"
    handler: Callable


class UniversalPeripheral:
    """Declarative MMIO model: masked bits route to handler functions,
    unmasked bits pass through the backing memory bytes.

    Accesses wider than a mapping still hit it: a 4-byte read covering a
    1-byte status register routes that byte through the handler and leaves
    the other bytes alone.
    """

    def __init__(self, name: str = "peripheral"):
        self.name = name
        self.reads: list[Mapping] = []
        self.writes: list[Mapping] = []
        self.interrupt_line: Optional[tuple] = None   # (controller, id)
        self._endian = "little"

    def _add(self, table, mapping: Mapping) -> None:
        for entry in table:
            if (entry.address == mapping.address
                    and entry.bitmask == mapping.bitmask):
                raise ValueError(
                    f"duplicate mapping for {mapping.address:#x} mask "
                    f"{mapping.bitmask:#x} {mapping.direction}")
        table.append(mapping)

    def map_function_addr_read(self, address: int, bitmask: int,
                               handler: Callable, width: int = 1) -> None:
        self._add(self.reads,
                  Mapping(address, width, bitmask, "read", handler))

    def map_function_addr_write(self, address: int, bitmask: int,
                                handler: Callable, width: int = 1) -> None:
        self._add(self.writes,
                  Mapping(address, width, bitmask, "write", handler))

    def _span(self):
        mappings = self.reads + self.writes
        lo = min(m.address for m in mappings)
        hi = max(m.address + m.width for m in mappings) - 1
        return lo, hi

    def attach(self, sim: Simulator) -> int:
        lo, hi = self._span()
        for addr in range(lo, hi + 1, 4096):
            sim.state.map_page(addr)
        sim.state.map_page(hi)
        self._endian = sim.spec.endianness
        reg = ObserverRegistration(
            kinds=frozenset({"memory_read", "memory_write"}),
            addr_range=(lo, hi))
        sim.add_stateful(self)
        return sim.observers.attach(reg, self.on_event)

    def _shift(self, mapping: Mapping, event: Event) -> Optional[int]:
        """Bit offset of the mapping inside the accessed word, or None if
        the access does not cover the mapping."""
        if (mapping.address < event.address
                or mapping.address + mapping.width
                > event.address + event.width):
            return None
        if self._endian == "little":
            return 8 * (mapping.address - event.address)
        return 8 * ((event.address + event.width)
                    - (mapping.address + mapping.width))

    def on_event(self, event: Event):
        if event.kind == "memory_read":
            value = event.value
            hit = False
            for m in self.reads:
                shift = self._shift(m, event)
                if shift is None:
                    continue
                hit = True
                mask = m.bitmask << shift
                value = (value & ~mask) | ((m.handler() << shift) & mask)
            if not hit:
                return None
            return OverrideValue(value.to_bytes(event.width, self._endian))
        for m in self.writes:
            shift = self._shift(m, event)
            if shift is not None:
                m.handler((event.value >> shift) & m.bitmask)
        return None

    def raise_interrupt(self) -> None:
        if self.interrupt_line is not None:
            controller, line_id = self.interrupt_line
            controller.raise_(line_id)

    # snapshot/fork participation: models are plain-data; deep copy works
    def snapshot_state(self):
        return self._state_dict()

    def restore_state(self, blob) -> None:
        self.__dict__.update(blob)

    def _state_dict(self):
        return {}

    def clone_for_fork(self):
        import copy
        return copy.deepcopy(self)


class CompareMatchTimer(UniversalPeripheral):
    """Counter peripheral: while enabled, +1 per architectural instruction;
    reaching the match value sets the matched flag, wraps the counter to
    zero, and raises the attached interrupt line.  A match value of zero is
    treated as 2**width (it never matches)."""

    def __init__(self, name: str = "cmt"):
        super().__init__(name)
        self.enabled = False
        self.counter = 0
        self.match_value = 0
        self.matched = False

    # handler functions for declarative mapping
    def is_enabled(self) -> int:
        return 1 if self.enabled else 0

    def set_enable(self, bits: int) -> None:
        self.enabled = bool(bits)

    def read_counter(self) -> int:
        return self.counter

    def write_counter(self, value: int) -> None:
        self.counter = value

    def read_match(self) -> int:
        return self.match_value

    def write_match(self, value: int) -> None:
        self.match_value = value

    def read_status(self) -> int:
        return 0x80 if self.matched else 0

    def clear_status(self, _bits: int) -> None:
        self.matched = False

    def configure_registers(self, control: int, match: int, counter: int,
                            status: Optional[int] = None,
                            width: int = 1) -> None:
        self.map_function_addr_read(control, 0x01, self.is_enabled, width)
        self.map_function_addr_write(control, 0x01, self.set_enable, width)
        self.map_function_addr_read(match, (1 << (8 * 4)) - 1,
                                    self.read_match, 4)
        self.map_function_addr_write(match, (1 << (8 * 4)) - 1,
                                     self.write_match, 4)
        self.map_function_addr_read(counter, (1 << (8 * 4)) - 1,
                                    self.read_counter, 4)
        self.map_function_addr_write(counter, (1 << (8 * 4)) - 1,
                                     self.write_counter, 4)
        if status is not None:
            self.map_function_addr_read(status, 0x80, self.read_status,
                                        width)
            self.map_function_addr_write(status, 0x80, self.clear_status,
                                         width)

    def attach(self, sim: Simulator) -> int:
        observer_id = super().attach(sim)
        reg = ObserverRegistration(kinds=frozenset({"architectural_step"}))
        sim.observers.attach(reg, self.tick)
        return observer_id

    def tick(self, _event: Event = None):
        if not self.enabled:
            return None
        self.counter += 1
        if self.match_value and self.counter >= self.match_value:
            self.counter = 0
            self.matched = True
            self.raise_interrupt()
        return None

    def _state_dict(self):
        return {"enabled": self.enabled, "counter": self.counter,
                "match_value": self.match_value, "matched": self.matched}


# ---------------------------------------------------------------------------
# FIFO frame stream (CAN-style)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanFrame:
    id: int                    # 29-bit identifier
    data: bytes                # dlc = len(data), 0..8

    def __post_init__(self):
        if not (0 <= self.id < (1 << 29)):
            raise ValueError(f"CAN id {self.id:#x} exceeds 29 bits")
        if len(self.data) > 8:
            raise ValueError("CAN dlc is at most 8")

    @property
    def dlc(self) -> int:
        return len(self.data)


def parse_replay_line(line: str) -> CanFrame:
    """`HEXID#HEXDATA`, e.g. `18DB33F1#0210`."""
    m = re.fullmatch(r"\s*([0-9a-fA-F]{1,8})#([0-9a-fA-F]*)\s*", line)
    if not m:
        raise ValueError(f"bad frame line {line!r}")
    return CanFrame(int(m.group(1), 16), bytes.fromhex(m.group(2)))


def load_replay_file(path: str) -> list[CanFrame]:
    frames = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                frames.append(parse_replay_line(line))
    return frames


class FifoStream(UniversalPeripheral):
    """Frame queue behind MMIO registers.

    Register block at `base`:
      +0x00 CTRL   (write) bit0 = next-message, bit1 = reset
      +0x04 STATUS (read)  bit0 = data-available, bits 8..15 = frames left
      +0x08 ID     (read)  current frame identifier
      +0x0c DATA0  (read)  frame bytes 0..3
      +0x10 DATA1  (read)  frame bytes 4..7
      +0x14 DLC    (read)  current frame length

    Writing the next-message bit dequeues into the ID/DATA registers and
    sets data-available; a status read always reports the live queue
    length; the reset bit clears the queue and reinitializes registers.
    """

    CTRL, STATUS, ID, DATA0, DATA1, DLC = 0x0, 0x4, 0x8, 0xc, 0x10, 0x14

    def __init__(self, base: int, name: str = "fifo"):
        super().__init__(name)
        self.base = base
        self.queue: deque[CanFrame] = deque()
        self.data_available = False
        self.current_id = 0
        self.current_data = b""
        self.map_function_addr_write(base + self.CTRL, 0x3,
                                     self.write_control, 4)
        self.map_function_addr_read(base + self.STATUS, 0xffffffff,
                                    self.read_status, 4)
        self.map_function_addr_read(base + self.ID, 0xffffffff,
                                    self.read_id, 4)
        self.map_function_addr_read(base + self.DATA0, 0xffffffff,
                                    self.read_data_low, 4)
        self.map_function_addr_read(base + self.DATA1, 0xffffffff,
                                    self.read_data_high, 4)
        self.map_function_addr_read(base + self.DLC, 0xffffffff,
                                    self.read_dlc, 4)

    def push(self, frame: CanFrame) -> None:
        self.queue.append(frame)

    def write_control(self, bits: int) -> None:
        if bits & 0x2:
            self.queue.clear()
            self.data_available = False
            self.current_id = 0
            self.current_data = b""
            return
        if bits & 0x1:
            if self.queue:
                frame = self.queue.popleft()
                self.current_id = frame.id
                self.current_data = frame.data
                self.data_available = True
            else:
                self.data_available = False

    def read_status(self) -> int:
        return ((len(self.queue) & 0xff) << 8) | (
            1 if self.data_available else 0)

    def read_id(self) -> int:
        return self.current_id

    def read_data(self, offset: int) -> int:
        chunk = self.current_data[offset:offset + 4]
        return int.from_bytes(chunk.ljust(4, b"\x00"), "little")

    def read_data_low(self) -> int:
        return self.read_data(0)

    def read_data_high(self) -> int:
        return self.read_data(4)

    def read_dlc(self) -> int:
        return len(self.current_data)

    def _state_dict(self):
        return {"queue": deque(self.queue),
                "data_available": self.data_available,
                "current_id": self.current_id,
                "current_data": self.current_data}


class ByteSource(UniversalPeripheral):
    """Single data register fed from a byte queue (serial input)."""

    def __init__(self, address: int, name: str = "serial"):
        super().__init__(name)
        self.address = address
        self.pending: deque[int] = deque()
        self.last = 0
        self.map_function_addr_read(address, 0xffffffff, self.read_data, 4)
        self.map_function_addr_read(address + 4, 0xffffffff,
                                    self.read_available, 4)

    def feed(self, data: bytes) -> None:
        self.pending.extend(data)

    def read_available(self) -> int:
        return len(self.pending)

    def read_data(self) -> int:
        if self.pending:
            self.last = self.pending.popleft()
        return self.last

    def _state_dict(self):
        return {"pending": deque(self.pending), "last": self.last}
