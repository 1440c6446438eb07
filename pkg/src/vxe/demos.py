"""Builds runnable demo workspaces from the bundled sources.

`build_workspace(out_dir)` copies the processor specs, assembles every
bundled firmware, and instantiates the config templates with the assembled
symbol addresses.  Also provides the in-framework task switcher used by the
scheduler demo.

Run `python -m vxe.demos <out_dir>` to materialize everything.
"""

from __future__ import annotations

import importlib.resources as resources
import os
import string
from dataclasses import dataclass, field

from .archspec import parse_spec
from .assembler import assemble

FIRMWARE = ("stall", "canids", "backdoor", "overflow", "rtos", "isrloop",
            "sender", "gateway", "hello")
CONFIGS = ("stall", "canids", "backdoor", "overflow", "isrloop",
           "interdevice", "hello")


def bundled_text(relative: str) -> str:
    return (resources.files("vxe") / "bundled" / relative).read_text()


@dataclass
class Workspace:
    root: str
    symbols: dict[str, dict[str, int]] = field(default_factory=dict)
    images: dict[str, str] = field(default_factory=dict)
    configs: dict[str, str] = field(default_factory=dict)

    def symbol(self, firmware: str, name: str) -> int:
        return self.symbols[firmware][name]

    def config(self, name: str) -> str:
        return self.configs[name]


def build_workspace(out_dir: str) -> Workspace:
    ws = Workspace(out_dir)
    spec_dir = os.path.join(out_dir, "specs")
    fw_dir = os.path.join(out_dir, "fw")
    os.makedirs(spec_dir, exist_ok=True)
    os.makedirs(fw_dir, exist_ok=True)

    for spec_name in ("toy32", "toy16dpp"):
        text = bundled_text(f"specs/{spec_name}.spec")
        with open(os.path.join(spec_dir, f"{spec_name}.spec"), "w",
                  encoding="utf-8") as f:
            f.write(text)

    spec = parse_spec(bundled_text("specs/toy32.spec"))
    substitutions: dict[str, int] = {}
    for name in FIRMWARE:
        source = bundled_text(f"fw/{name}.asm")
        image, base, symbols = assemble(spec, source)
        path = os.path.join(fw_dir, f"{name}.bin")
        with open(path, "wb") as f:
            f.write(image)
        ws.symbols[name] = symbols
        ws.images[name] = path
        for sym, value in symbols.items():
            substitutions.setdefault(sym, value)

    for name in CONFIGS:
        template = string.Template(bundled_text(f"configs/{name}.toml"))
        text = template.substitute(
            {k: f"0x{v:X}" for k, v in substitutions.items()})
        path = os.path.join(out_dir, f"{name}.toml")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        ws.configs[name] = path
    return ws


class TaskSwitcher:
    """In-framework scheduler: each timer interrupt swaps the whole GPR
    context and resume address between two task entry points."""

    def __init__(self, sim, entries: tuple[int, int], stack_top: int):
        self.sim = sim
        self.contexts = [None, None]
        self.entries = entries
        self.stack_top = stack_top
        self.active = 0
        self.switches = 0

    def __call__(self, sim) -> None:
        other = 1 - self.active
        self.contexts[self.active] = (bytes(sim.state.register_file),
                                      sim.state.pc)
        if self.contexts[other] is None:
            # first activation: fresh context at the task entry
            sim.state.register_file[:] = bytes(
                len(sim.state.register_file))
            sim.write_varnode(sim.spec.registers["R13"], self.stack_top)
            sim.write_varnode(sim.spec.registers["R3"], 1)
            pc = self.entries[other]
        else:
            registers, pc = self.contexts[other]
            sim.state.register_file[:] = registers
        sim.state.pc = pc
        sim.write_varnode(sim.spec.pc, pc)
        sim._block = None
        self.active = other
        self.switches += 1


def main(argv=None) -> int:
    import argparse
    parser = argparse.ArgumentParser(
        description="materialize the bundled demo workspace")
    parser.add_argument("out_dir")
    args = parser.parse_args(argv)
    ws = build_workspace(args.out_dir)
    for name, path in sorted(ws.configs.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
