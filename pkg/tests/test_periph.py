"""Check solver, universal peripherals, timer, and the CAN FIFO."""

from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from vxe.assembler import assemble
from vxe.machine import Simulator
from vxe.periph import (CanFrame, CheckSolverConfig, CompareMatchTimer,
                        FifoStream, UniversalPeripheral, check_solver_attach,
                        parse_replay_line)


def boot(spec, source, **kwargs):
    image, base, symbols = assemble(spec, source)
    sim = Simulator(spec, **kwargs)
    sim.load_image(image, base, entry=base)
    return sim, symbols


POLL_AND_4 = """
.org 0x0
  movi r2, 0xfff8
  shl r2, 16
  movi r3, 0x1104
  or r2, r3
  movi r3, 4
poll:
  ld r1, [r2+0]
  and r1, r3
  beq poll
main:
  jmp main
"""


class TestCheckSolver:
    def test_listing_style_loop_bypassed_with_value_four(self, toy32):
        sim, syms = boot(toy32, POLL_AND_4)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        reason = sim.run(stop_addresses={syms["main"]}, op_budget=100_000)
        assert reason.kind == "address"
        assert solver.bypasses == 1
        # the injected value satisfies the exit condition minimally
        assert sim.read_varnode(toy32.registers["R1"]) == 4

    def test_all_three_stall_loops_bypassed(self, toy32, workspace):
        with open(workspace.images["stall"], "rb") as f:
            data = f.read()
        sim = Simulator(toy32)
        sim.load_image(data, 0, entry=0)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        reason = sim.run(stop_addresses={workspace.symbol("stall", "main")},
                         op_budget=1_000_000)
        assert reason.kind == "address"
        assert solver.bypasses == 3

    def test_reads_outside_ranges_never_tracked(self, toy32):
        source = POLL_AND_4.replace("movi r2, 0xfff8", "movi r2, 0xeee8")
        sim, syms = boot(toy32, source)
        sim.state.map_page(0xEEE81104)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        reason = sim.run(stop_addresses={syms["main"]}, op_budget=5_000)
        assert reason.kind == "budget"        # stall persists
        assert not solver.sites

    def test_constant_condition_never_engages_solver(self, toy32):
        sim, _ = boot(toy32, """
.org 0x0
  movi r1, 0
loop:
  cmp r1, r1
  beq done
  jmp loop
done:
  movi r2, 0x9000
  halt
""")
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        sim.run(op_budget=10_000)
        assert solver.bypasses == 0

    def test_injected_value_satisfies_exit_condition(self, toy32):
        sim, syms = boot(toy32, POLL_AND_4)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        sim.run(stop_addresses={syms["main"]}, op_budget=100_000)
        # exit needs (v & 4) != 0
        assert sim.read_varnode(toy32.registers["R1"]) & 4

    def test_range_widen_unblocks_wider_check(self, toy32):
        source = POLL_AND_4.replace("movi r3, 0x1104",
                                    "movi r3, 0xa000").replace(
            "movi r2, 0xfff8", "movi r2, 0xffff")
        sim, syms = boot(toy32, source)
        sim.state.map_page(0xFFFFA000)   # backed, but outside assumed MMIO
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFF400000, 0xFFFF7FFF)]))
        reason = sim.run(stop_addresses={syms["main"]}, op_budget=3_000)
        assert reason.kind == "budget"        # 0xFFFFA000 untracked
        solver.widen_ranges([(0xFFFF8000, 0xFFFFFFFF)])
        reason = sim.run(stop_addresses={syms["main"]}, op_budget=100_000)
        assert reason.kind == "address"

    def test_widen_rejects_overlapping_ranges(self, toy32):
        sim, _ = boot(toy32, POLL_AND_4)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        with pytest.raises(ValueError, match="overlap"):
            solver.widen_ranges([(0xFFF8F000, 0xFFF9FFFF)])

    def test_widen_empty_delta_no_change(self, toy32):
        sim, syms = boot(toy32, POLL_AND_4)
        solver = check_solver_attach(sim, CheckSolverConfig(
            ranges=[(0xFFF80000, 0xFFF8FFFF)]))
        solver.widen_ranges([])
        reason = sim.run(stop_addresses={syms["main"]}, op_budget=100_000)
        assert reason.kind == "address"


class TestUniversalPeripheral:
    def make_sim(self, toy32, extra=""):
        return boot(toy32, f"""
.org 0x0
  movi r2, 0xfff9
  shl r2, 16
{extra}
  halt
""")

    def test_masked_read_bits_from_handler(self, toy32):
        sim, _ = self.make_sim(toy32, "  ld r1, [r2+0]")
        peripheral = UniversalPeripheral("dev")
        peripheral.map_function_addr_read(0xFFF90000, 0x01,
                                          lambda: 1, width=4)
        peripheral.attach(sim)
        sim.write_mem(0xFFF90000, 4, 0xA0)      # unmasked backing bits
        sim.run(op_budget=100)
        assert sim.read_varnode(toy32.registers["R1"]) == 0xA1

    def test_masked_write_bits_routed_to_handler(self, toy32):
        sim, _ = self.make_sim(toy32, "  movi r1, 0x43\n  st [r2+0], r1")
        seen = []
        peripheral = UniversalPeripheral("dev")
        peripheral.map_function_addr_write(0xFFF90000, 0x01, seen.append,
                                           width=4)
        peripheral.attach(sim)
        sim.run(op_budget=100)
        assert seen == [0x01]
        # unmasked bits passed through to backing memory
        assert sim.read_mem(0xFFF90000, 4) & 0x42 == 0x42

    def test_duplicate_mapping_rejected(self):
        peripheral = UniversalPeripheral()
        peripheral.map_function_addr_read(0x10, 0x1, lambda: 0)
        with pytest.raises(ValueError, match="duplicate"):
            peripheral.map_function_addr_read(0x10, 0x1, lambda: 1)

    def test_unmasked_bits_round_trip(self, toy32):
        sim, _ = self.make_sim(
            toy32, "  movi r1, 0xaa\n  st [r2+0], r1\n  ld r3, [r2+0]")
        peripheral = UniversalPeripheral("dev")
        peripheral.map_function_addr_read(0xFFF90000, 0x01, lambda: 0,
                                          width=4)
        peripheral.attach(sim)
        sim.run(op_budget=100)
        assert sim.read_varnode(toy32.registers["R3"]) == 0xAA


class TestCompareMatchTimer:
    def attach_timer(self, toy32, source):
        sim, syms = boot(toy32, source)
        timer = CompareMatchTimer()
        timer.configure_registers(control=0xFFF90000, match=0xFFF90004,
                                  counter=0xFFF90008, status=0xFFF9000C)
        timer.attach(sim)
        return sim, timer

    def test_enable_bit_reflects_handler(self, toy32):
        sim, timer = self.attach_timer(toy32, """
.org 0x0
  movi r2, 0xfff9
  shl r2, 16
  ld r1, [r2+0]
  halt
""")
        timer.enabled = True
        sim.run(op_budget=100)
        assert sim.read_varnode(toy32.registers["R1"]) & 1 == 1

    def test_firmware_can_start_timer_via_control_bit(self, toy32):
        sim, timer = self.attach_timer(toy32, """
.org 0x0
  movi r2, 0xfff9
  shl r2, 16
  movi r1, 1
  st [r2+0], r1
  nop
  nop
  halt
""")
        sim.run(op_budget=100)
        assert timer.enabled
        assert timer.counter > 0

    def test_counter_frozen_while_disabled(self, toy32):
        sim, timer = self.attach_timer(toy32,
                                       ".org 0x0\nnop\nnop\nnop\nhalt\n")
        sim.run(op_budget=100)
        assert timer.counter == 0

    def test_match_raises_interrupt_and_wraps(self, toy32):
        raised = []
        class FakeController:
            def raise_(self, line_id):
                raised.append(line_id)
        sim, timer = self.attach_timer(
            toy32, ".org 0x0\n" + "nop\n" * 10 + "halt\n")
        timer.enabled = True
        timer.match_value = 4
        timer.interrupt_line = (FakeController(), 3)
        sim.run(op_budget=1000)
        assert raised and raised[0] == 3
        assert timer.matched

    def test_match_zero_never_matches(self, toy32):
        sim, timer = self.attach_timer(
            toy32, ".org 0x0\n" + "nop\n" * 10 + "halt\n")
        timer.enabled = True
        timer.match_value = 0
        sim.run(op_budget=1000)
        assert not timer.matched


class TestFifoStream:
    def test_push_dequeue_reads_id(self, toy32):
        sim, _ = boot(toy32, """
.org 0x0
  movi r2, 0xfff8
  shl r2, 16
  movi r1, 1
  st [r2+0], r1
  ld r3, [r2+8]
  halt
""")
        fifo = FifoStream(0xFFF80000)
        fifo.attach(sim)
        fifo.push(CanFrame(0x7DF, bytes.fromhex("021001")))
        sim.run(op_budget=100)
        assert sim.read_varnode(toy32.registers["R3"]) == 0x7DF

    def test_message_left_counts_queue(self, toy32):
        sim, _ = boot(toy32, """
.org 0x0
  movi r2, 0xfff8
  shl r2, 16
  movi r1, 1
  st [r2+0], r1
  ld r3, [r2+4]
  halt
""")
        fifo = FifoStream(0xFFF80000)
        fifo.attach(sim)
        for _ in range(3):
            fifo.push(CanFrame(0x100, b"\x01"))
        sim.run(op_budget=100)
        status = sim.read_varnode(toy32.registers["R3"])
        assert (status >> 8) & 0xFF == 2      # one dequeued, two left
        assert status & 1 == 1                # data available

    def test_reset_clears_queue(self, toy32):
        sim, _ = boot(toy32, """
.org 0x0
  movi r2, 0xfff8
  shl r2, 16
  movi r1, 2
  st [r2+0], r1
  ld r3, [r2+4]
  halt
""")
        fifo = FifoStream(0xFFF80000)
        fifo.attach(sim)
        for _ in range(5):
            fifo.push(CanFrame(0x100, b"\x01"))
        sim.run(op_budget=100)
        status = sim.read_varnode(toy32.registers["R3"])
        assert (status >> 8) & 0xFF == 0
        assert status & 1 == 0

    def test_dequeue_on_empty_keeps_available_clear(self, toy32):
        fifo = FifoStream(0xFFF80000)
        fifo.write_control(0x1)
        assert not fifo.data_available

    @settings(max_examples=50, deadline=None)
    @given(script=st.lists(
        st.one_of(st.tuples(st.just("push"), st.integers(0, 0x1FFFFFFF)),
                  st.tuples(st.just("next"), st.just(0)),
                  st.tuples(st.just("reset"), st.just(0))),
        max_size=30))
    def test_matches_reference_queue_model(self, script):
        fifo = FifoStream(0x1000)
        model: deque = deque()
        model_current = None
        for action, value in script:
            if action == "push":
                frame = CanFrame(value, b"\x01\x02")
                fifo.push(frame)
                model.append(frame)
            elif action == "next":
                fifo.write_control(0x1)
                model_current = model.popleft() if model else None
            else:
                fifo.write_control(0x2)
                model.clear()
                model_current = None
            assert (fifo.read_status() >> 8) & 0xFF == min(len(model), 255)
            if model_current is not None:
                assert fifo.read_id() == model_current.id


class TestReplayFormat:
    def test_parse_line(self):
        frame = parse_replay_line("18DB33F1#0210")
        assert frame.id == 0x18DB33F1
        assert frame.data == bytes.fromhex("0210")
        assert frame.dlc == 2

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError):
            parse_replay_line("xyz")

    def test_id_width_and_dlc_limits(self):
        with pytest.raises(ValueError, match="29 bits"):
            CanFrame(1 << 29, b"")
        with pytest.raises(ValueError, match="at most 8"):
            CanFrame(1, b"123456789")
