"""Interrupt controller: dispatch, priorities, nesting, and returns."""

import pytest

from vxe.archspec import parse_spec
from vxe.assembler import assemble
from vxe.interrupts import InterruptController, InterruptSpec
from vxe.machine import SimError, Simulator


def boot(spec, source):
    image, base, symbols = assemble(spec, source)
    sim = Simulator(spec)
    sim.load_image(image, base, entry=base)
    return sim, symbols


COUNT_WITH_ISR = """
.org 0x0
start:
  movi r1, 0
  movi r3, 1
  movi r4, 200
loop:
  add r1, r3
  cmp r1, r4
  bne loop
  halt

.org 0x200
isr:
  movi r9, 0x77
  ret
"""


def vector_spec(vector, line_id=0, priority=0):
    return InterruptSpec(id=line_id, priority=priority, vector=vector,
                         save=("SR", "PC"), sentinel=0xFFFFFFF0,
                         link_register="R15")


class TestConfigureRaise:
    def test_raise_while_disabled_stays_pending(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.raise_(0)
        for _ in range(5):
            sim.step_instruction()
        assert controller.pending[0]
        assert controller.dispatch_count == 0

    def test_raise_twice_coalesces_to_one_dispatch(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        controller.raise_(0)
        controller.raise_(0)
        sim.run(op_budget=5000)
        assert controller.dispatch_count == 1

    def test_unknown_id_rejected(self):
        controller = InterruptController()
        with pytest.raises(KeyError):
            controller.raise_(9)

    def test_cmt_line_raises_configured_interrupt(self, toy32):
        from vxe.periph import CompareMatchTimer
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        timer = CompareMatchTimer()
        timer.configure_registers(control=0xFFF90000, match=0xFFF90004,
                                  counter=0xFFF90008)
        timer.interrupt_line = (controller, 0)
        timer.attach(sim)
        timer.enabled = True
        timer.match_value = 20
        sim.run(op_budget=5000)
        assert controller.dispatch_count >= 1
        assert sim.read_varnode(toy32.registers["R9"]) == 0x77


class TestDispatch:
    def test_vector_and_stack_depth(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        sim.step_instruction()
        controller.raise_(0)
        sim.step_instruction()   # dispatch happens at this boundary
        assert sim.state.pc in (syms["isr"], syms["isr"] + 4)
        assert controller.depth == 1

    def test_priority_order_lower_value_first(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR + """
.org 0x300
isr2:
  movi r10, 0x88
  ret
""")
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr2"], line_id=2,
                                         priority=2))
        controller.configure(vector_spec(syms["isr"], line_id=1,
                                         priority=1))
        controller.attach(sim)
        controller.set_enabled(1, True)
        controller.set_enabled(2, True)
        controller.raise_(1)
        controller.raise_(2)
        sim.step_instruction()
        # priority 1 dispatched first (the step also ran one ISR insn)
        assert sim.state.pc in (syms["isr"], syms["isr"] + 4)

    def test_none_pending_no_state_change(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        before = bytes(sim.state.register_file)
        assert controller.dispatch_pending(sim) is None
        assert bytes(sim.state.register_file) == before


class TestReturn:
    def test_status_register_restored_bit_exact(self, toy32):
        source = COUNT_WITH_ISR.replace("movi r9, 0x77",
                                        "xor r9, r9")   # ISR smashes flags
        sim, syms = boot(toy32, source)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        for _ in range(6):
            sim.step_instruction()
        sr_before = bytes(sim.state.register_file[0x44:0x48])
        pc_before = sim.state.pc
        controller.raise_(0)
        sim.step_instruction()          # dispatch + first ISR instruction
        while controller.depth:
            sim.step_instruction()
        assert bytes(sim.state.register_file[0x44:0x48]) == sr_before
        assert sim.state.pc == pc_before

    def test_nested_two_levels_unwind_lifo(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR + """
.org 0x300
isr2:
  movi r10, 0x88
  ret
""")
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"], line_id=0,
                                         priority=1))
        controller.configure(vector_spec(syms["isr2"], line_id=1,
                                         priority=0))
        controller.attach(sim)
        controller.set_enabled(0, True)
        controller.set_enabled(1, True)
        sim.step_instruction()
        controller.raise_(0)
        sim.step_instruction()          # enter isr
        assert controller.depth == 1
        controller.raise_(1)            # higher priority nests
        sim.step_instruction()
        assert controller.depth == 2
        assert sim.state.pc in (syms["isr2"], syms["isr2"] + 4)
        while controller.depth == 2:
            sim.step_instruction()
        # back in the first ISR
        assert syms["isr"] <= sim.state.pc < syms["isr2"]

    def test_return_with_empty_stack_is_error(self, toy32):
        sim, syms = boot(toy32, COUNT_WITH_ISR)
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        with pytest.raises(SimError, match="interrupt underflow"):
            controller.return_from_interrupt(sim)

    def test_effect_free_isr_is_transparent(self, toy32):
        plain, _ = boot(toy32, COUNT_WITH_ISR.replace(
            "movi r9, 0x77\n  ret", "ret"))
        plain.run(op_budget=50_000)

        sim, syms = boot(toy32, COUNT_WITH_ISR.replace(
            "movi r9, 0x77\n  ret", "ret"))
        controller = InterruptController()
        controller.configure(vector_spec(syms["isr"]))
        controller.attach(sim)
        controller.set_enabled(0, True)
        fired = 0
        while not sim.state.halted and fired < 40:
            sim.step_instruction()
            if sim.state.pc % 12 == 0:
                controller.raise_(0)
                fired += 1
        sim.run(op_budget=50_000)
        assert fired and controller.dispatch_count >= 1
        assert bytes(sim.state.register_file) == bytes(
            plain.state.register_file)


class TestIntrinsicReturnTrigger:
    """An rte-style instruction declared in the processor spec."""

    RTE_SPEC = """
arch rtetoy 1
endian little
space ram kind=ram size=0x10000 default
space register kind=register size=0x10
space unique kind=temporary size=0x20
reg A offset=0x0 size=4
reg PC offset=0x8 size=4 pc
insn INC bits=16 match="00000001........" asm="inc" {
    A = A + 1:4
}
insn RTE bits=16 match="00000010........" asm="rte" {
    intrinsic "rte"()
}
insn HALT bits=16 match="00000011........" asm="halt" {
    halt
}
"""

    def test_rte_instruction_returns_from_interrupt(self):
        spec = parse_spec(self.RTE_SPEC)
        image, base, syms = assemble(spec, """
.org 0x0
main:
  inc
  inc
  inc
  halt
.org 0x20
isr:
  inc
  rte
""")
        sim = Simulator(spec)
        sim.load_image(image, base, entry=0)
        controller = InterruptController()
        controller.configure(InterruptSpec(
            id=0, priority=0, vector=0x20, save=("PC",),
            return_intrinsic="rte"))
        controller.attach(sim)
        controller.set_enabled(0, True)
        sim.step_instruction()          # first inc
        controller.raise_(0)
        sim.step_instruction()          # dispatch + isr inc
        assert controller.depth == 1
        sim.step_instruction()          # rte
        assert controller.depth == 0
        sim.run(op_budget=100)
        # 3 main incs + 1 isr inc
        assert sim.read_varnode(spec.registers["A"]) == 4
