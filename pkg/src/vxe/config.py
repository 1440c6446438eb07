"""Declarative environment configs (TOML).

A config names the whole virtual execution environment: one `[[device]]`
table per firmware (spec, image, entry, execution mode, MMIO ranges,
peripherals, observers, interrupts), `[[route]]` tables wiring device
events to actions on other devices, and an optional `[fuzz]` section.
Validation reports schema violations with field paths and checks that
referenced files exist.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ImportError:                       # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    pass


MODE_KINDS = ("concrete", "forced", "micro", "flood", "concolic")
PERIPHERAL_KINDS = ("check_solver", "cmt", "can_fifo", "byte_source",
                    "input_buffer")
OBSERVER_KINDS = ("trace_dump", "coverage", "write_log")
ACTION_KINDS = ("feed_bytes", "push_frame", "dump_trace", "raise_interrupt")
EVENT_SELECTOR_KINDS = ("memory_read", "memory_write", "register_write",
                        "new_coverage")


@dataclass
class ModeConfig:
    kind: str = "concrete"
    params: dict = field(default_factory=dict)


@dataclass
class PeripheralConfig:
    kind: str
    name: str
    params: dict


@dataclass
class ObserverConfig:
    kind: str
    name: str
    params: dict


@dataclass
class InterruptConfig:
    id: int
    priority: int
    vector: Optional[int]
    save: list[str]
    sentinel: Optional[int]
    link: Optional[str]
    return_intrinsic: Optional[str]
    enabled: bool
    line: Optional[str]      # peripheral that raises this line


@dataclass
class DeviceConfig:
    name: str
    spec_path: str
    image_path: str
    image_base: int
    entry: int
    mode: ModeConfig
    optimize: bool
    mmio: list[tuple[int, int]]
    ram: list[tuple[int, int]]
    peripherals: list[PeripheralConfig]
    observers: list[ObserverConfig]
    interrupts: list[InterruptConfig]
    instruction_budget: Optional[int]
    op_budget: Optional[int]
    stop_addresses: list[int]


@dataclass
class RouteConfig:
    from_device: str
    event: dict
    to_device: str
    action: dict


@dataclass
class FuzzConfig:
    device: str
    input_peripheral: str
    goals: list[int]
    corpus_dir: str
    max_execs: int
    seed: int
    splitting: bool
    snapshot_at: Optional[int]
    red_zone: Optional[tuple[int, int]]
    op_budget_per_exec: int
    stop_on_goal: bool
    instances: int


@dataclass
class VxeConfig:
    name: str
    devices: list[DeviceConfig]
    routes: list[RouteConfig]
    fuzz: Optional[FuzzConfig]
    base_dir: str

    def device(self, name: str) -> DeviceConfig:
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return table[key]


def _mode(raw, where: str) -> ModeConfig:
    if raw is None:
        return ModeConfig()
    if isinstance(raw, str):
        kind, params = raw, {}
    elif isinstance(raw, dict):
        kind = raw.get("kind", "concrete")
        params = {k: v for k, v in raw.items() if k != "kind"}
    else:
        raise ConfigError(f"{where}.mode: expected string or table")
    if kind not in MODE_KINDS:
        raise ConfigError(f"{where}.mode: unknown kind {kind!r}")
    return ModeConfig(kind, params)


def _ranges(raw, where: str) -> list[tuple[int, int]]:
    out = []
    for i, pair in enumerate(raw or []):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(x, int) for x in pair)):
            raise ConfigError(f"{where}[{i}]: expected [lo, hi] integers")
        if pair[0] > pair[1]:
            raise ConfigError(f"{where}[{i}]: empty range")
        out.append((pair[0], pair[1]))
    return out


def load_config(path: str) -> VxeConfig:
    """Parse and fully validate a VXE config; referenced files checked."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}")
    base_dir = os.path.dirname(os.path.abspath(path))

    devices = []
    names = set()
    for index, dev in enumerate(raw.get("device", [])):
        where = f"device[{index}]"
        name = _need(dev, "name", where)
        if name in names:
            raise ConfigError(f"{where}.name: duplicate device {name!r}")
        names.add(name)
        spec_path = os.path.join(base_dir, _need(dev, "spec", where))
        if not os.path.exists(spec_path):
            raise ConfigError(f"{where}.spec: no such file: {spec_path}")
        image = _need(dev, "image", where)
        image_path = os.path.join(base_dir, _need(image, "path",
                                                  where + ".image"))
        if not os.path.exists(image_path):
            raise ConfigError(
                f"{where}.image.path: no such file: {image_path}")

        peripherals = []
        for p_index, p in enumerate(dev.get("peripheral", [])):
            p_where = f"{where}.peripheral[{p_index}]"
            kind = _need(p, "kind", p_where)
            if kind not in PERIPHERAL_KINDS:
                raise ConfigError(f"{p_where}.kind: unknown kind {kind!r}")
            params = {k: v for k, v in p.items()
                      if k not in ("kind", "name")}
            if kind == "can_fifo" and "replay" in params:
                replay = os.path.join(base_dir, params["replay"])
                if not os.path.exists(replay):
                    raise ConfigError(
                        f"{p_where}.replay: no such file: {replay}")
                params["replay"] = replay
            peripherals.append(PeripheralConfig(
                kind, p.get("name", f"{kind}{p_index}"), params))

        observers = []
        for o_index, o in enumerate(dev.get("observer", [])):
            o_where = f"{where}.observer[{o_index}]"
            kind = _need(o, "kind", o_where)
            if kind not in OBSERVER_KINDS:
                raise ConfigError(f"{o_where}.kind: unknown kind {kind!r}")
            observers.append(ObserverConfig(
                kind, o.get("name", f"{kind}{o_index}"),
                {k: v for k, v in o.items() if k not in ("kind", "name")}))

        interrupts = []
        seen_ids = set()
        for i_index, item in enumerate(dev.get("interrupt", [])):
            i_where = f"{where}.interrupt[{i_index}]"
            line_id = _need(item, "id", i_where)
            if line_id in seen_ids:
                raise ConfigError(f"{i_where}.id: duplicate id {line_id}")
            seen_ids.add(line_id)
            interrupts.append(InterruptConfig(
                id=line_id,
                priority=item.get("priority", 0),
                vector=item.get("vector"),
                save=list(item.get("save", [])),
                sentinel=item.get("sentinel"),
                link=item.get("link"),
                return_intrinsic=item.get("return_intrinsic"),
                enabled=item.get("enabled", True),
                line=item.get("line")))

        devices.append(DeviceConfig(
            name=name, spec_path=spec_path, image_path=image_path,
            image_base=image.get("base", 0),
            entry=dev.get("entry", image.get("base", 0)),
            mode=_mode(dev.get("mode"), where),
            optimize=dev.get("optimize", True),
            mmio=_ranges(dev.get("mmio"), where + ".mmio"),
            ram=_ranges(dev.get("ram"), where + ".ram"),
            peripherals=peripherals, observers=observers,
            interrupts=interrupts,
            instruction_budget=dev.get("instruction_budget"),
            op_budget=dev.get("op_budget"),
            stop_addresses=list(dev.get("stop_addresses", []))))

    if not devices:
        raise ConfigError("config declares no devices")

    routes = []
    for index, route in enumerate(raw.get("route", [])):
        where = f"route[{index}]"
        src = _need(route, "from", where)
        dst = _need(route, "to", where)
        if src not in names:
            raise ConfigError(f"{where}.from: no such device: {src!r}")
        if dst not in names:
            raise ConfigError(f"{where}.to: no such device: {dst!r}")
        event = _need(route, "event", where)
        if event.get("kind") not in EVENT_SELECTOR_KINDS:
            raise ConfigError(
                f"{where}.event.kind: unknown kind {event.get('kind')!r}")
        action = _need(route, "action", where)
        if action.get("kind") not in ACTION_KINDS:
            raise ConfigError(
                f"{where}.action.kind: unknown kind {action.get('kind')!r}")
        routes.append(RouteConfig(src, dict(event), dst, dict(action)))

    fuzz = None
    if "fuzz" in raw:
        section = raw["fuzz"]
        device = _need(section, "device", "fuzz")
        if device not in names:
            raise ConfigError(f"fuzz.device: no such device: {device!r}")
        red_zone = section.get("red_zone")
        if red_zone is not None:
            red_zone = (red_zone[0], red_zone[1])
        fuzz = FuzzConfig(
            device=device,
            input_peripheral=_need(section, "input", "fuzz"),
            goals=list(section.get("goals", [])),
            corpus_dir=os.path.join(base_dir,
                                    section.get("corpus", "corpus")),
            max_execs=section.get("max_execs", 1_000_000),
            seed=section.get("seed", 0),
            splitting=section.get("splitting", True),
            snapshot_at=section.get("snapshot_at"),
            red_zone=red_zone,
            op_budget_per_exec=section.get("op_budget_per_exec", 4096),
            stop_on_goal=section.get("stop_on_goal", True),
            instances=section.get("instances", 1))
        dev = next(d for d in devices if d.name == device)
        if not any(p.name == fuzz.input_peripheral
                   for p in dev.peripherals):
            raise ConfigError(
                f"fuzz.input: device {device!r} has no peripheral named "
                f"{fuzz.input_peripheral!r}")

    return VxeConfig(name=raw.get("name", "vxe"), devices=devices,
                     routes=routes, fuzz=fuzz, base_dir=base_dir)
