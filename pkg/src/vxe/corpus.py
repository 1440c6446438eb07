"""Block corpus generation and differential execution.

The reduction and equivalence harness runs over blocks lifted from the
bundled demo firmware plus generated random programs.  Differential
execution runs one block twice (optimized vs not) from an identical random
initial state and compares every externally visible effect: register file,
RAM, control outcome, and halt flag.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .archspec import ImageView, ProcessorSpec, lift_block
from .ir import IRBlock, count_ops
from .machine import MicroMode, Simulator

# Mnemonic mix for generated straight-line programs.  Weights skew toward
# data-processing ops the way firmware does.
_DATA_OPS = [
    ("movi r{d}, 0x{imm:x}", 3),
    ("mov r{d}, r{s}", 2),
    ("add r{d}, r{s}", 3),
    ("sub r{d}, r{s}", 2),
    ("xor r{d}, r{s}", 2),
    ("xor r{x}, r{x}", 1),      # same-register zeroing idiom
    ("and r{d}, r{s}", 2),
    ("or r{d}, r{s}", 2),
    ("shl r{d}, {sh}", 1),
    ("shr r{d}, {sh}", 1),
    ("ld r{d}, [r{p}+0x{off:x}]", 2),
    ("st [r{p}+0x{off:x}], r{s}", 2),
    ("cmp r{d}, r{s}", 2),
    ("nop", 1),
]

_TERMINATORS = ["beq 0x{t:x}", "bne 0x{t:x}", "jmp 0x{t:x}",
                "call 0x{t:x}", "ret", "halt"]


def generate_program(rng: random.Random, min_len: int = 2,
                     max_len: int = 10) -> str:
    """One random straight-line TOY32 block ending in a control transfer."""
    lines = [".org 0x0"]
    population = [t for t, w in _DATA_OPS for _ in range(w)]
    for _ in range(rng.randint(min_len, max_len)):
        template = rng.choice(population)
        lines.append(template.format(
            d=rng.randrange(13), s=rng.randrange(13), x=rng.randrange(13),
            p=rng.randrange(13), sh=rng.randrange(0, 32),
            imm=rng.randrange(0, 0x10000), off=rng.randrange(0, 0x80) * 4))
    lines.append(rng.choice(_TERMINATORS).format(t=rng.randrange(0x10000)))
    return "\n".join(lines)


def generate_corpus(spec: ProcessorSpec, count: int,
                    seed: int = 0) -> list[IRBlock]:
    """Lift `count` generated programs (unoptimized blocks)."""
    from .assembler import assemble
    rng = random.Random(seed)
    blocks = []
    while len(blocks) < count:
        source = generate_program(rng)
        image, base, _ = assemble(spec, source)
        block = lift_block(spec, ImageView(image, base), base)
        if block.instructions:
            blocks.append(block)
    return blocks


# ---------------------------------------------------------------------------
# Differential execution
# ---------------------------------------------------------------------------

@dataclass
class BlockOutcome:
    registers: bytes
    ram: dict[int, bytes]
    next_pc: object
    halted: bool

    def __eq__(self, other):
        return (self.registers == other.registers
                and self.ram == other.ram
                and self.next_pc == other.next_pc
                and self.halted == other.halted)


def run_block(spec: ProcessorSpec, block: IRBlock, state_seed: int,
              op_cap: int = 4096) -> BlockOutcome:
    """Execute one block in isolation from a seeded random initial state.

    Memory is micro-mode with a seeded random fill so both sides of a
    differential pair observe identical loads.
    """
    sim = Simulator(spec, mode=MicroMode(fill="random", seed=state_seed),
                    optimize=False)
    rng = random.Random(state_seed)
    sim.state.register_file[:] = bytes(
        rng.randrange(256) for _ in range(len(sim.state.register_file)))
    sim.state.pc = block.start_address
    next_pc = None
    for insn in block.instructions:
        if sim.state.halted or sim.op_count > op_cap:
            break
        sim.state.pc = insn.address
        sim.state.temporaries[:] = bytes(len(sim.state.temporaries))
        sim.write_varnode(spec.pc, insn.address + insn.length_bytes)
        sim.op_count = 0
        next_pc = sim._execute_ops(insn)
        if next_pc is not None:
            break
    if next_pc is None:
        next_pc = sim.read_varnode(spec.pc)
    return BlockOutcome(
        registers=bytes(sim.state.register_file),
        ram={base: bytes(page) for base, page in sim.state.ram.items()},
        next_pc=next_pc, halted=sim.state.halted)


def differential_check(spec: ProcessorSpec, unoptimized: IRBlock,
                       optimized: IRBlock, state_seed: int) -> bool:
    """True when both encodings produce bit-identical outcomes."""
    return (run_block(spec, unoptimized, state_seed)
            == run_block(spec, optimized, state_seed))


def reduction_stats(spec: ProcessorSpec, blocks: list[IRBlock],
                    optimize_fn=None) -> tuple[int, int, float]:
    """(ops before, ops after, reduction fraction) over a block list."""
    if optimize_fn is None:
        from .optimizer import optimize_block
        optimize_fn = optimize_block
    before = after = 0
    for block in blocks:
        before += count_ops(block)
        after += count_ops(optimize_fn(block, spec))
    return before, after, (before - after) / before if before else 0.0
