"""Synthesize and run a whole virtual execution environment from a config.

One simulator per device (each on its own thread), peripherals and
observers attached per configuration, and the coordinator mediating all
cross-device traffic: device events are forwarded per the `[[route]]`
tables, and inboxes are drained at instruction boundaries.  Simulators of
the same firmware share one lift cache.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import periph
from .archspec import ProcessorSpec, parse_spec
from .cache import LiftCache
from .config import DeviceConfig, VxeConfig
from .coordinator import Coordinator, Message
from .interrupts import InterruptController, InterruptSpec
from .machine import (ConcolicMode, ConcreteMode, FloodMode, ForcedMode,
                      MicroMode, Simulator, StopReason)
from .observe import CoverageTracker, Event, ObserverRegistration, TraceDumper

log = logging.getLogger(__name__)

DEFAULT_INSTRUCTION_BUDGET = 2_000_000


def _make_mode(cfg):
    params = cfg.params
    if cfg.kind == "concrete":
        return ConcreteMode()
    if cfg.kind == "forced":
        return ForcedMode(flip_sites=frozenset(params.get("flip", [])))
    if cfg.kind == "micro":
        return MicroMode(fill=params.get("fill", "zeros"),
                         fill_byte=params.get("fill_byte", 0),
                         seed=params.get("seed", 0))
    if cfg.kind == "flood":
        return FloodMode(k=params.get("k", 3),
                         op_budget=params.get("op_budget", 1_000_000),
                         fill=params.get("fill", "zeros"),
                         seed=params.get("seed", 0))
    if cfg.kind == "concolic":
        regions = tuple(tuple(r) for r in params.get("symbolic", []))
        return ConcolicMode(symbolic_regions=regions)
    raise ValueError(cfg.kind)


@dataclass
class Device:
    """One built simulator plus its named attachments."""
    name: str
    sim: Simulator
    config: DeviceConfig
    peripherals: dict[str, object] = field(default_factory=dict)
    observers: dict[str, object] = field(default_factory=dict)
    controller: Optional[InterruptController] = None
    check_solver: Optional[periph.CheckSolver] = None
    stop_reason: Optional[StopReason] = None
    flood_result: Optional[object] = None


class Environment:
    def __init__(self, config: VxeConfig, out_dir: Optional[str] = None):
        self.config = config
        self.out_dir = out_dir or config.base_dir
        self.coordinator = Coordinator()
        self.devices: dict[str, Device] = {}
        self._specs: dict[str, ProcessorSpec] = {}
        self._caches: dict[str, LiftCache] = {}
        self._stop_event = threading.Event()
        for dev_cfg in config.devices:
            self.devices[dev_cfg.name] = self._build_device(dev_cfg)
        for route in config.routes:
            self._wire_route(route)

    # -- construction ------------------------------------------------------

    def _spec_for(self, path: str) -> ProcessorSpec:
        if path not in self._specs:
            with open(path, "r", encoding="utf-8") as f:
                self._specs[path] = parse_spec(f.read())
        return self._specs[path]

    def _build_device(self, cfg: DeviceConfig) -> Device:
        spec = self._spec_for(cfg.spec_path)
        # same-firmware simulators share one lift cache
        cache = self._caches.setdefault(cfg.spec_path, LiftCache())
        sim = Simulator(spec, mode=_make_mode(cfg.mode), cache=cache,
                        optimize=cfg.optimize, name=cfg.name)
        with open(cfg.image_path, "rb") as f:
            sim.load_image(f.read(), cfg.image_base, entry=cfg.entry)
        for lo, hi in list(cfg.ram) + list(cfg.mmio):
            addr = lo
            while addr <= hi:
                sim.state.map_page(addr)
                addr += 4096
        device = Device(cfg.name, sim, cfg)
        self.coordinator.register_device(cfg.name)

        if spec.name == "toy16dpp":
            from .arch_support import attach_dpp_intrinsics
            attach_dpp_intrinsics(sim)

        if cfg.interrupts:
            controller = InterruptController()
            for item in cfg.interrupts:
                controller.configure(InterruptSpec(
                    id=item.id, priority=item.priority, vector=item.vector,
                    save=tuple(item.save),
                    return_intrinsic=item.return_intrinsic,
                    sentinel=item.sentinel, link_register=item.link))
            controller.attach(sim)
            for item in cfg.interrupts:
                controller.set_enabled(item.id, item.enabled)
            device.controller = controller

        for p_cfg in cfg.peripherals:
            self._attach_peripheral(device, p_cfg)
        for o_cfg in cfg.observers:
            self._attach_observer(device, o_cfg)

        sim.boundary_hooks.append(self._drain_hook(device))
        return device

    def _attach_peripheral(self, device: Device, p_cfg) -> None:
        sim = device.sim
        params = p_cfg.params
        if p_cfg.kind == "check_solver":
            ranges = [tuple(r) for r in params.get("ranges",
                                                   device.config.mmio)]
            solver = periph.check_solver_attach(
                sim, periph.CheckSolverConfig(
                    ranges=ranges,
                    reentry_window=params.get("reentry_window", 4096),
                    max_tracked_reads=params.get("max_tracked_reads", 64)))
            device.check_solver = solver
            device.peripherals[p_cfg.name] = solver
        elif p_cfg.kind == "cmt":
            timer = periph.CompareMatchTimer(p_cfg.name)
            timer.configure_registers(
                control=params["control"], match=params["match"],
                counter=params["counter"], status=params.get("status"))
            if "interrupt" in params:
                if device.controller is None:
                    raise ValueError(
                        f"{device.name}: cmt names an interrupt line but "
                        "the device has no interrupt table")
                timer.interrupt_line = (device.controller,
                                        params["interrupt"])
            timer.attach(sim)
            if params.get("enabled"):
                timer.enabled = True
            if "match_value" in params:
                timer.match_value = params["match_value"]
            device.peripherals[p_cfg.name] = timer
        elif p_cfg.kind == "can_fifo":
            fifo = periph.FifoStream(params["base"], p_cfg.name)
            fifo.attach(sim)
            if "replay" in params:
                for frame in periph.load_replay_file(params["replay"]):
                    fifo.push(frame)
            device.peripherals[p_cfg.name] = fifo
        elif p_cfg.kind == "byte_source":
            source = periph.ByteSource(params["address"], p_cfg.name)
            source.attach(sim)
            if "data" in params:
                source.feed(bytes.fromhex(params["data"]))
            elif "seed" in params:
                import random
                rng = random.Random(params["seed"])
                source.feed(bytes(rng.randrange(256)
                                  for _ in range(params.get("count", 256))))
            device.peripherals[p_cfg.name] = source
        elif p_cfg.kind == "input_buffer":
            device.peripherals[p_cfg.name] = InputBuffer(
                buffer=params["buffer"],
                length_addr=params["length_addr"],
                max_len=params.get("max_len", 64))
        else:
            raise ValueError(p_cfg.kind)

    def _attach_observer(self, device: Device, o_cfg) -> None:
        sim = device.sim
        params = o_cfg.params
        if o_cfg.kind == "coverage":
            tracker = CoverageTracker(
                splitting=params.get("splitting", True))
            sim.observers.attach(tracker.registration(), tracker)
            device.observers[o_cfg.name] = tracker
        elif o_cfg.kind == "trace_dump":
            dumper = PairTraceDumper(
                start=_trigger(params["start"]),
                stop=_trigger(params["stop"]),
                out_dir=os.path.join(self.out_dir,
                                     params.get("out", "traces")),
                deferred=params.get("deferred", False))
            sim.observers.attach(dumper.registration(), dumper)
            device.observers[o_cfg.name] = dumper
        elif o_cfg.kind == "write_log":
            from .observe import RegisterWriteLog
            if "addr" in params:
                width = params.get("width", 4)
                logger = RegisterWriteLog(
                    kinds=("memory_write",),
                    addr_range=(params["addr"],
                                params["addr"] + width - 1))
            else:
                register = self._spec_for(
                    device.config.spec_path).registers[params["register"]]
                logger = RegisterWriteLog(kinds=("register_write",),
                                          register=register)
            sim.observers.attach(logger.registration(), logger)
            device.observers[o_cfg.name] = logger
        else:
            raise ValueError(o_cfg.kind)

    # -- routing -----------------------------------------------------------

    def _wire_route(self, route) -> None:
        source = self.devices[route.from_device]
        event_kind = route.event.get("kind")
        if event_kind == "new_coverage":
            tracker = next(
                (obs for obs in source.observers.values()
                 if isinstance(obs, CoverageTracker)), None)
            if tracker is None:
                raise ValueError(
                    f"route from {route.from_device}: new_coverage needs a "
                    "coverage observer on that device")
            previous = tracker.on_new

            def on_new(items, _route=route):
                if previous is not None:
                    previous(items)
                self.coordinator.route(Message(
                    sender=_route.from_device,
                    kind=_route.action["kind"],
                    payload=dict(_route.action)), to=_route.to_device)
            tracker.on_new = on_new
            return

        addr = route.event.get("addr")
        width = route.event.get("width", 4)
        registration = ObserverRegistration(
            kinds=frozenset({event_kind}),
            addr_range=(addr, addr + width - 1) if addr is not None
            else None)

        def forward(event: Event, _route=route):
            payload = dict(_route.action)
            payload["value"] = event.value
            payload["width"] = event.width
            self.coordinator.route(
                Message(sender=_route.from_device,
                        kind=_route.action["kind"], payload=payload),
                to=_route.to_device)
            return None

        source.sim.observers.attach(registration, forward)

    def _drain_hook(self, device: Device):
        def drain(sim: Simulator):
            for message in self.coordinator.drain(device.name):
                self._apply_action(device, message)
        return drain

    def _apply_action(self, device: Device, message: Message) -> None:
        kind = message.kind
        payload = message.payload or {}
        if kind == "feed_bytes":
            target = device.peripherals.get(payload.get("peripheral"))
            if target is None:
                self.coordinator.diagnostics.append(
                    f"{device.name}: feed_bytes to unknown peripheral")
                return
            value = payload.get("value", 0)
            width = payload.get("width") or 1
            target.feed(value.to_bytes(width, "little")[:payload.get(
                "bytes", 1)])
        elif kind == "push_frame":
            target = device.peripherals.get(payload.get("peripheral"))
            if target is None:
                self.coordinator.diagnostics.append(
                    f"{device.name}: push_frame to unknown peripheral")
                return
            width = payload.get("width") or 4
            data = payload.get("value", 0).to_bytes(width, "little")
            target.push(periph.CanFrame(payload.get("id", 0), data))
        elif kind == "dump_trace":
            for obs in device.observers.values():
                if isinstance(obs, PairTraceDumper):
                    obs.emit_last()
        elif kind == "raise_interrupt":
            if device.controller is not None:
                device.controller.raise_(payload.get("id", 0))
        else:
            self.coordinator.diagnostics.append(
                f"{device.name}: unknown action {kind!r}")

    # -- running -------------------------------------------------------------

    def run(self) -> dict[str, StopReason]:
        """One thread per device; returns per-device stop reasons."""
        threads = []
        for device in self.devices.values():
            thread = threading.Thread(target=self._run_device,
                                      args=(device,), daemon=True)
            threads.append(thread)
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        return {name: dev.stop_reason
                for name, dev in self.devices.items()}

    def _run_device(self, device: Device) -> None:
        cfg = device.config
        try:
            if isinstance(device.sim.mode, FloodMode):
                from .machine import flood_explore
                mode = device.sim.mode
                result = flood_explore(device.sim, [cfg.entry],
                                       k=mode.k, op_budget=mode.op_budget)
                device.flood_result = result
                reason = StopReason("halt", device.sim.state.pc,
                                    f"flood: {len(result.visited)} "
                                    "directions")
            else:
                reason = device.sim.run(
                    stop_addresses=cfg.stop_addresses,
                    op_budget=cfg.op_budget,
                    instruction_budget=(cfg.instruction_budget
                                        or DEFAULT_INSTRUCTION_BUDGET))
        except Exception as e:        # a device fault stops only itself
            log.exception("device %s crashed", device.name)
            reason = StopReason("fault", device.sim.state.pc, str(e))
        device.stop_reason = reason
        self.coordinator.mark_stopped(device.name)


@dataclass
class InputBuffer:
    """Fuzz input injection point: raw bytes plus a length word."""
    buffer: int
    length_addr: int
    max_len: int

    def inject(self, sim: Simulator, data: bytes) -> None:
        data = data[:self.max_len]
        sim.state.map_page(self.buffer)
        sim.state.map_page(self.length_addr)
        sim.write_mem(self.length_addr, 4, len(data))
        for i, b in enumerate(data):
            sim.write_mem(self.buffer + i, 1, b)


def _trigger(selector: dict):
    kind = selector.get("event", selector.get("kind"))
    addr = selector.get("addr")

    def predicate(event: Event) -> bool:
        if event.kind != kind:
            return False
        if addr is not None and event.address != addr:
            return False
        return True
    return predicate


class PairTraceDumper(TraceDumper):
    """Trace dumper that can pair traces with the inputs that drove them.

    In deferred mode completed traces are held until a dump command
    arrives (the coordinator sends one on new remote coverage); emit_last
    then writes trace-NNNN.txt and input-NNNN.bin together.
    """

    def __init__(self, start, stop, out_dir, deferred=False):
        super().__init__(start, stop, out_dir)
        self.deferred = deferred
        self.input_bytes: list[int] = []
        self.last_input: bytes = b""
        self.pairs = 0

    def __call__(self, event: Event):
        if (self.active and event.value is not None
                and self.start_trigger(event)):
            self.input_bytes.append(event.value & 0xff)
        if not self.active and self.start_trigger(event):
            self.input_bytes = [(event.value or 0) & 0xff]
        result = super().__call__(event)
        return result

    def _write(self, pcs):
        self.last_input = bytes(self.input_bytes)
        if self.deferred:
            self.last_trace = list(pcs)
            return
        super()._write(pcs)

    def emit_last(self) -> bool:
        if not self.last_trace:
            return False
        pcs = self.last_trace
        self.count += 1
        trace_path = os.path.join(self.out_dir,
                                  f"trace-{self.count:04d}.txt")
        input_path = os.path.join(self.out_dir,
                                  f"input-{self.count:04d}.bin")
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(trace_path, "w", encoding="utf-8") as f:
                for pc in pcs:
                    f.write(f"0x{pc:x}\n")
            with open(input_path, "wb") as f:
                f.write(self.last_input)
        except OSError:
            log.exception("pair dump failed; continuing")
            self.count -= 1
            return False
        self.pairs += 1
        return True


def run_vxe(config: VxeConfig,
            out_dir: Optional[str] = None) -> dict[str, StopReason]:
    return Environment(config, out_dir).run()
