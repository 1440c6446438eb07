"""Execution observers: event taxonomy, dispatch, traces, and coverage.

Observers attach to a simulator, receive events matching their filters, and
answer with responses that may alter execution (value overrides, instruction
skipping, branch flipping, call replacement, forking, halting).  Dispatch
order is registration order; the first non-Continue control response wins
while later observers still see the event read-only, and value overrides
compose last-writer-wins.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from .ir import VarNode

log = logging.getLogger(__name__)

EVENT_KINDS = (
    "operand_read", "operand_write",
    "memory_read", "memory_write",
    "register_read", "register_write",
    "architectural_step", "operation_step",
    "cbranch", "call",
)


@dataclass
class Event:
    kind: str
    pc: int
    address: Optional[int] = None
    varnode: Optional[VarNode] = None
    value: Optional[int] = None
    width: Optional[int] = None
    instruction: object = None      # architectural_step
    op: object = None               # operation_step
    condition: Optional[int] = None  # cbranch
    target: Optional[int] = None    # cbranch / call
    compare: object = None          # cbranch: feeding-compare provenance


# --- responses -------------------------------------------------------------
# Callbacks return None to continue, or one of the objects below.

@dataclass(frozen=True)
class OverrideValue:
    data: bytes


class _Control:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name


SkipInstruction = _Control("SkipInstruction")
FlipBranch = _Control("FlipBranch")
Fork = _Control("Fork")
Halt = _Control("Halt")


@dataclass(frozen=True)
class ReplaceCall:
    handler_id: str


@dataclass
class MergedResponse:
    override: Optional[bytes] = None
    control: object = None      # first non-Continue control response


@dataclass
class ObserverRegistration:
    kinds: frozenset[str]
    addr_range: Optional[tuple[int, int]] = None   # inclusive bounds
    register: Optional[VarNode] = None
    id: int = -1

    def matches(self, event: Event) -> bool:
        if event.kind not in self.kinds:
            return False
        if self.addr_range is not None and event.address is not None:
            lo, hi = self.addr_range
            if not (lo <= event.address <= hi):
                return False
        elif self.addr_range is not None and event.address is None:
            return False
        if self.register is not None:
            if event.varnode is None:
                return False
            if not self.register.overlaps(event.varnode):
                return False
        return True


class ObserverRegistry:
    """Per-simulator observer table with deterministic dispatch order."""

    def __init__(self):
        self._entries: list[tuple[ObserverRegistration, Callable]] = []
        self._next_id = 0
        self._interest: set[str] = set()
        self.generation = 0

    def attach(self, registration: ObserverRegistration,
               callback: Callable[[Event], object]) -> int:
        bad = registration.kinds - set(EVENT_KINDS)
        if bad:
            raise ValueError(f"unknown event kinds: {sorted(bad)}")
        registration.id = self._next_id
        self._next_id += 1
        self._entries.append((registration, callback))
        self._rebuild_interest()
        self.generation += 1
        return registration.id

    def detach(self, observer_id: int) -> None:
        for i, (reg, _) in enumerate(self._entries):
            if reg.id == observer_id:
                del self._entries[i]
                self._rebuild_interest()
                self.generation += 1
                return
        raise KeyError(f"no observer with id {observer_id}")

    def watched_registers(self, register_space) -> frozenset:
        """(space, offset) bytes whose writes some observer watches; such
        writes are externally visible and must survive optimization."""
        out = set()
        for reg, _ in self._entries:
            if not (reg.kinds & {"register_write", "operand_write"}):
                continue
            if reg.register is not None:
                vn = reg.register
                out.update((vn.space, vn.offset + i) for i in range(vn.size))
            else:
                out.update((register_space.id, i)
                           for i in range(register_space.extent_bytes))
        return frozenset(out)

    def _rebuild_interest(self):
        self._interest = set()
        for reg, _ in self._entries:
            self._interest |= reg.kinds

    def wants(self, kind: str) -> bool:
        return kind in self._interest

    def dispatch(self, event: Event) -> MergedResponse:
        merged = MergedResponse()
        for reg, callback in self._entries:
            if not reg.matches(event):
                continue
            try:
                response = callback(event)
            except Exception:
                log.exception("observer %d failed; treating as Continue",
                              reg.id)
                continue
            if response is None:
                continue
            if isinstance(response, OverrideValue):
                merged.override = response.data
            elif merged.control is None:
                merged.control = response
        return merged

    def clone_for_fork(self) -> "ObserverRegistry":
        """Observers carry over to forks; stateful callbacks that implement
        clone_for_fork() are duplicated, others are shared."""
        new = ObserverRegistry()
        new._next_id = self._next_id
        new.generation = self.generation
        for reg, callback in self._entries:
            owner = getattr(callback, "__self__", None)
            clone_hook = getattr(owner, "clone_for_fork", None)
            if clone_hook is not None:
                cloned = clone_hook()
                callback = getattr(cloned, callback.__name__)
            new._entries.append((reg, callback))
        new._rebuild_interest()
        return new


# ---------------------------------------------------------------------------
# Trace dumping
# ---------------------------------------------------------------------------

class TraceDumper:
    """Record architectural pcs between a start and a stop trigger.

    Files are written to `out_dir` as trace-0001.txt, trace-0002.txt, ...
    one lowercase hex pc per line.  The instruction whose execution raised
    the start trigger is the first line; the one raising the stop trigger is
    the last.
    """

    def __init__(self, start_trigger: Callable[[Event], bool],
                 stop_trigger: Callable[[Event], bool],
                 out_dir: str,
                 on_trace: Optional[Callable[[str, list[int]], None]] = None,
                 kinds: frozenset = frozenset(
                     {"architectural_step", "memory_read", "memory_write"})):
        self.start_trigger = start_trigger
        self.stop_trigger = stop_trigger
        self.out_dir = out_dir
        self.on_trace = on_trace
        self.kinds = frozenset(kinds) | {"architectural_step"}
        self.active = False
        self.current_pc: Optional[int] = None
        self.buffer: list[int] = []
        self.count = 0
        self.last_trace: Optional[list[int]] = None

    def registration(self) -> ObserverRegistration:
        return ObserverRegistration(kinds=self.kinds)

    def __call__(self, event: Event):
        if event.kind == "architectural_step":
            self.current_pc = event.pc
            if self.active:
                self.buffer.append(event.pc)
            return None
        if not self.active and self.start_trigger(event):
            self.active = True
            self.buffer = []
            if self.current_pc is not None:
                self.buffer.append(self.current_pc)
            return None
        if self.active and self.stop_trigger(event):
            self.active = False
            self.last_trace = list(self.buffer)
            self._write(self.buffer)
            self.buffer = []
        return None

    def _write(self, pcs: list[int]):
        self.count += 1
        path = os.path.join(self.out_dir, f"trace-{self.count:04d}.txt")
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                for pc in pcs:
                    f.write(f"0x{pc:x}\n")
        except OSError:
            log.exception("trace dump to %s failed; continuing", path)
            self.count -= 1
            return
        if self.on_trace is not None:
            self.on_trace(path, pcs)


# ---------------------------------------------------------------------------
# Coverage tracking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareRecord:
    """Provenance of the wide compare feeding a conditional branch."""
    site: int
    lhs: int
    rhs: int
    width: int


_HIT_BUCKETS = (1, 2, 3, 4, 8, 16, 32, 64, 128)


def _bucket(count: int) -> int:
    for index in range(len(_HIT_BUCKETS) - 1, -1, -1):
        if count >= _HIT_BUCKETS[index]:
            return index
    return 0


class CoverageTracker:
    """Branch-direction coverage with optional comparison splitting.

    Items are (site, direction) pairs for conditional branches; with
    splitting enabled, a w-byte compare feeding a branch additionally yields
    (site, "cmp", i) for every byte i whose most-significant prefix
    0..i matches, giving byte-granular progress feedback.  A fuzz harness
    additionally enables bucketed hit counts (call begin_execution() before
    each run) so loop-iteration growth also registers as progress.
    """

    def __init__(self, splitting: bool = True,
                 on_new: Optional[Callable[[set], None]] = None,
                 hitcounts: bool = False):
        self.splitting = splitting
        self.on_new = on_new
        self.hitcounts = hitcounts
        self.covered: set = set()
        self._counts: dict = {}

    def registration(self) -> ObserverRegistration:
        return ObserverRegistration(kinds=frozenset({"cbranch"}))

    def clone_for_fork(self):
        return self  # coverage is deliberately shared across forks

    def begin_execution(self) -> None:
        self._counts.clear()

    def items_for(self, event: Event) -> set:
        direction = (event.pc, bool(event.condition))
        items = {direction}
        if self.hitcounts:
            count = self._counts.get(direction, 0) + 1
            self._counts[direction] = count
            items.add(("hits",) + direction + (_bucket(count),))
        if self.splitting and event.compare is not None:
            rec: CompareRecord = event.compare
            a = rec.lhs.to_bytes(rec.width, "big")
            b = rec.rhs.to_bytes(rec.width, "big")
            for i in range(rec.width):
                if a[i] != b[i]:
                    break
                items.add((rec.site, "cmp", i))
        return items

    def __call__(self, event: Event):
        items = self.items_for(event)
        fresh = items - self.covered
        if fresh:
            self.covered |= fresh
            if self.on_new is not None:
                self.on_new(fresh)
        return None

    def export_lines(self) -> list[str]:
        """Text export: `0x<site> <0|1>` per branch-direction entry."""
        lines = []
        for item in sorted(self.covered, key=repr):
            if len(item) == 2 and isinstance(item[1], bool):
                lines.append(f"0x{item[0]:x} {int(item[1])}")
        return lines


class RegisterWriteLog:
    """Collect every value written to one storage cell (e.g. a CAN-ID
    register); shared across forks so flood exploration aggregates."""

    def __init__(self, kinds=("memory_write", "register_write"),
                 addr_range=None, register=None):
        self.kinds = frozenset(kinds)
        self.addr_range = addr_range
        self.register = register
        self.values: list[int] = []

    def registration(self) -> ObserverRegistration:
        return ObserverRegistration(kinds=self.kinds,
                                    addr_range=self.addr_range,
                                    register=self.register)

    def clone_for_fork(self):
        return self

    def __call__(self, event: Event):
        self.values.append(event.value)
        return None
