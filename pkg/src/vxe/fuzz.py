"""Built-in snapshot-based coverage-guided fuzzer.

A concrete warm-up run reaches the snapshot point (explicit address, or the
first read of the input buffer); each iteration then restores the snapshot,
injects a mutated input through the configured input peripheral, runs with
an op budget, and keeps inputs that produce new coverage.  Feedback
includes split-comparison sub-events (byte-granular progress through wide
compares feeding branches), which is what makes magic-value checks
tractable.  Goals are configured addresses or any write into the red-zone
range.  With several instances, corpus and coverage are shared through the
coordinator's fact store.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
from dataclasses import dataclass, field
from typing import Optional

from .config import FuzzConfig, VxeConfig
from .coordinator import Coordinator
from .environment import Environment, InputBuffer
from .machine import Simulator
from .observe import CoverageTracker, Event, ObserverRegistration

log = logging.getLogger(__name__)

INTERESTING_BYTES = (0x00, 0x01, 0x7f, 0x80, 0xff, 0x10, 0x20, 0x41)


@dataclass
class CorpusEntry:
    data: bytes
    added_at: int          # execution index when discovered


@dataclass
class FuzzReport:
    executions: int
    coverage: int
    goals: list[tuple[int, bytes]]          # (execution index, input)
    corpus_size: int
    stopped_early: bool

    def summary_line(self) -> str:
        goal_text = ",".join(f"{index}:{data.hex()}"
                             for index, data in self.goals)
        return (f"execs={self.executions} cov={self.coverage} "
                f"goals=[{goal_text}]")


class Mutator:
    """Deterministic mutation set over byte strings."""

    def __init__(self, rng: random.Random, max_len: int):
        self.rng = rng
        self.max_len = max_len

    def mutate(self, data: bytes, splice_with: Optional[bytes]) -> bytes:
        out = bytearray(data if data else b"\x00")
        for _ in range(1 << self.rng.randrange(4)):   # stacked mutations
            choice = self.rng.randrange(6)
            if choice == 0:                   # bit flip
                pos = self.rng.randrange(len(out))
                out[pos] ^= 1 << self.rng.randrange(8)
            elif choice == 1:                 # byte set (random)
                out[self.rng.randrange(len(out))] = self.rng.randrange(256)
            elif choice == 2:                 # interesting constants
                out[self.rng.randrange(len(out))] = self.rng.choice(
                    INTERESTING_BYTES)
            elif choice == 3:                 # block duplicate
                lo = self.rng.randrange(len(out))
                hi = min(len(out), lo + self.rng.randrange(1, 9))
                out[hi:hi] = out[lo:hi]
            elif choice == 4:                 # block remove
                if len(out) > 1:
                    lo = self.rng.randrange(len(out) - 1)
                    hi = min(len(out), lo + self.rng.randrange(1, 9))
                    del out[lo:hi]
            else:                             # splice
                if splice_with:
                    cut = self.rng.randrange(len(out))
                    take = splice_with[self.rng.randrange(
                        len(splice_with)):]
                    out = out[:cut] + bytearray(take)
                else:
                    out.append(self.rng.randrange(256))
            if not out:
                out.append(self.rng.randrange(256))
            del out[self.max_len:]
        return bytes(out)


class FuzzEngine:
    def __init__(self, sim: Simulator, input_buffer: InputBuffer,
                 cfg: FuzzConfig, coordinator: Optional[Coordinator] = None,
                 instance: int = 0):
        self.sim = sim
        self.input_buffer = input_buffer
        self.cfg = cfg
        self.coordinator = coordinator
        self.instance = instance
        self.rng = random.Random(cfg.seed * 1000003 + instance)
        self.mutator = Mutator(self.rng, input_buffer.max_len)
        self.coverage = CoverageTracker(splitting=cfg.splitting,
                                 hitcounts=True)
        self.corpus: list[CorpusEntry] = [CorpusEntry(b"\x00" * 4, 0)]
        self.goals: list[tuple[int, bytes]] = []
        self.executions = 0
        self.red_zone_hit = False
        self._snapshot = None
        self._goal_set = frozenset(cfg.goals)

    # -- setup ---------------------------------------------------------------

    def warm_up(self) -> None:
        """Concrete run from reset to the snapshot point (when one is
        configured; otherwise the snapshot is taken right at entry)."""
        cfg = self.cfg
        if cfg.snapshot_at is not None:
            reason = self.sim.run(stop_addresses={cfg.snapshot_at},
                                  op_budget=1_000_000)
            if reason.kind != "address":
                raise RuntimeError(
                    "warm-up never reached the snapshot point: "
                    f"{reason.kind} at pc {reason.pc:#x}")
        self.sim.observers.attach(self.coverage.registration(),
                                  self.coverage)
        if cfg.red_zone is not None:
            reg = ObserverRegistration(
                kinds=frozenset({"memory_write"}),
                addr_range=cfg.red_zone)
            self.sim.observers.attach(reg, self._red_zone_write)
        self._snapshot = self.sim.snapshot()

    def _red_zone_write(self, event: Event):
        self.red_zone_hit = True
        return None

    # -- corpus sharing ------------------------------------------------------

    def _publish(self, entry: CorpusEntry) -> None:
        if self.coordinator is None:
            return
        digest = hashlib.sha256(entry.data).hexdigest()
        self.coordinator.fact_put("fuzz-corpus", digest, entry.data)

    def _import_shared(self) -> None:
        if self.coordinator is None:
            return
        known = {hashlib.sha256(e.data).hexdigest() for e in self.corpus}
        for key in self.coordinator.fact_keys("fuzz-corpus"):
            if key not in known:
                data = self.coordinator.fact_get("fuzz-corpus", key)
                if data is not None:
                    self.corpus.append(CorpusEntry(data, self.executions))

    # -- main loop -------------------------------------------------------------

    def _pick(self) -> CorpusEntry:
        # energy schedule: inputs with recent new coverage get more turns
        weights = [1.0 + 4.0 / (1 + len(self.corpus) - 1 - index)
                   for index in range(len(self.corpus))]
        return self.rng.choices(self.corpus, weights)[0]

    def run_one(self, data: bytes) -> tuple[bool, bool]:
        """Returns (new coverage, goal reached)."""
        sim = self.sim
        sim.restore(self._snapshot)
        self.input_buffer.inject(sim, data)
        self.coverage.begin_execution()
        self.red_zone_hit = False
        before = len(self.coverage.covered)
        reason = sim.run(stop_addresses=self._goal_set,
                         op_budget=self.cfg.op_budget_per_exec)
        goal = reason.kind == "address" or self.red_zone_hit
        self.executions += 1
        return len(self.coverage.covered) > before, goal

    def run(self) -> FuzzReport:
        if self._snapshot is None:
            self.warm_up()
        cfg = self.cfg
        stopped_early = False
        while self.executions < cfg.max_execs:
            if self.instance or self.coordinator is not None:
                if self.executions % 512 == 0:
                    self._import_shared()
            parent = self._pick()
            splice = self._pick().data if len(self.corpus) > 1 else None
            data = self.mutator.mutate(parent.data, splice)
            new_cov, goal = self.run_one(data)
            if goal:
                self.goals.append((self.executions, data))
                self._save_input(data, goal=True)
                if cfg.stop_on_goal:
                    stopped_early = True
                    break
            if new_cov:
                entry = CorpusEntry(data, self.executions)
                self.corpus.append(entry)
                self._publish(entry)
                self._save_input(data, goal=False)
        return FuzzReport(self.executions, len(self.coverage.covered),
                          self.goals, len(self.corpus), stopped_early)

    def _save_input(self, data: bytes, goal: bool) -> None:
        directory = self.cfg.corpus_dir
        try:
            os.makedirs(directory, exist_ok=True)
            digest = hashlib.sha256(data).hexdigest()
            prefix = "goal-" if goal else ""
            with open(os.path.join(directory, prefix + digest), "wb") as f:
                f.write(data)
        except OSError:
            log.exception("could not save corpus input")


def run_fuzz(config: VxeConfig,
             out_dir: Optional[str] = None) -> FuzzReport:
    """Build the fuzz target device and run the campaign.

    With instances > 1, extra engines run on separate threads over forks of
    the warmed-up simulator, sharing corpus and coverage through the
    coordinator's fact store.
    """
    if config.fuzz is None:
        raise ValueError("config has no [fuzz] section")
    cfg = config.fuzz
    env = Environment(config, out_dir)
    device = env.devices[cfg.device]
    input_buffer = device.peripherals[cfg.input_peripheral]
    if not isinstance(input_buffer, InputBuffer):
        raise ValueError(
            f"fuzz.input: {cfg.input_peripheral!r} is not an input_buffer")

    engine = FuzzEngine(device.sim, input_buffer, cfg,
                        coordinator=env.coordinator
                        if cfg.instances > 1 else None)
    engine.warm_up()
    if cfg.instances <= 1:
        return engine.run()

    engines = [engine]
    for instance in range(1, cfg.instances):
        clone = FuzzEngine(device.sim.fork(), input_buffer, cfg,
                           coordinator=env.coordinator, instance=instance)
        clone._snapshot = clone.sim.snapshot()
        clone.sim.observers.attach(clone.coverage.registration(),
                                   clone.coverage)
        if cfg.red_zone is not None:
            reg = ObserverRegistration(kinds=frozenset({"memory_write"}),
                                       addr_range=cfg.red_zone)
            clone.sim.observers.attach(reg, clone._red_zone_write)
        engines.append(clone)

    reports: list[Optional[FuzzReport]] = [None] * len(engines)

    def worker(index: int):
        reports[index] = engines[index].run()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True)
               for i in range(len(engines))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total = FuzzReport(
        executions=sum(r.executions for r in reports),
        coverage=len(set().union(*(e.coverage.covered for e in engines))),
        goals=[g for r in reports for g in r.goals],
        corpus_size=max(len(e.corpus) for e in engines),
        stopped_early=any(r.stopped_early for r in reports))
    return total
