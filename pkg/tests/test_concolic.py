"""Concolic execution: symbolic regions, path constraints, negation."""

from vxe.assembler import assemble
from vxe.concolic import attach_concolic
from vxe.machine import ConcolicMode, Simulator
from vxe.symsolve import eval_expr


def concolic_boot(spec, source, regions):
    image, base, symbols = assemble(spec, source)
    sim = Simulator(spec, mode=ConcolicMode(symbolic_regions=regions))
    sim.load_image(image, base, entry=base)
    state = attach_concolic(sim, regions)
    return sim, state, symbols


CHECK_BYTE = """
.org 0x0
  movi r2, 0x4000
  ld r1, [r2+0]
  movi r3, 0xff
  and r1, r3
  movi r3, 0x41
  cmp r1, r3
  beq match
  movi r4, 0
  halt
match:
  movi r4, 1
  halt
"""


class TestConcolic:
    def test_branch_records_taken_constraint(self, toy32):
        sim, state, syms = concolic_boot(toy32, CHECK_BYTE,
                                         [(0x4000, 0x4003)])
        sim.state.map_page(0x4000)
        sim.write_mem(0x4000, 4, 0x41)        # shadow value takes the match
        sim.run(op_budget=1000)
        assert sim.read_varnode(toy32.registers["R4"]) == 1
        assert len(state.path) == 1
        shadow = {v: 0x41 for v in state.path[0].constraint.free_vars()}
        assert eval_expr(state.path[0].constraint.expr, shadow) != 0

    def test_negation_query_gives_other_branch_input(self, toy32):
        sim, state, _ = concolic_boot(toy32, CHECK_BYTE, [(0x4000, 0x4003)])
        sim.state.map_page(0x4000)
        sim.write_mem(0x4000, 4, 0x41)
        sim.run(op_budget=1000)
        result = state.negation_query()
        assert result.is_sat
        value = next(iter(result.assignment.values()))
        assert (value & 0xFF) != 0x41

    def test_two_byte_magic_negation(self, toy32):
        source = """
.org 0x0
  movi r2, 0x4000
  ld r1, [r2+0]
  movi r3, 0xffff
  and r1, r3
  movi r3, 0xcaff
  cmp r1, r3
  bne out
  movi r4, 1
out:
  halt
"""
        sim, state, _ = concolic_boot(toy32, source, [(0x4000, 0x4003)])
        sim.state.map_page(0x4000)
        sim.run(op_budget=1000)      # shadow 0: not-equal path taken
        assert len(state.path) == 1
        result = state.negation_query()
        assert result.is_sat
        value = next(iter(result.assignment.values()))
        assert (value & 0xFFFF) == 0xCAFF

    def test_no_symbolic_regions_behaves_concrete(self, toy32, workspace):
        with open(workspace.images["canids"], "rb") as f:
            data = f.read()

        def run(concolic):
            sim = Simulator(toy32)
            sim.load_image(data, 0, entry=0)
            sim.state.map_page(0xFFF80100)
            sim.state.map_page(0xFFF80200)
            if concolic:
                attach_concolic(sim, [])
            sim.run(op_budget=10_000)
            return bytes(sim.state.register_file)

        assert run(False) == run(True)

    def test_observer_can_inject_symbol(self, toy32):
        sim, state, _ = concolic_boot(toy32, CHECK_BYTE, [])
        sim.state.map_page(0x4000)
        r1 = toy32.registers["R1"]
        state.inject_symbol(r1)
        assert state.tracker.is_tainted(r1)

    def test_snapshot_restores_path(self, toy32):
        sim, state, _ = concolic_boot(toy32, CHECK_BYTE, [(0x4000, 0x4003)])
        sim.state.map_page(0x4000)
        snap = sim.snapshot()
        sim.run(op_budget=1000)
        assert state.path
        sim.restore(snap)
        assert not state.path
