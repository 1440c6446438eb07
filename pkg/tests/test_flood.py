"""Flood exploration: bounded both-direction branch coverage."""

from vxe.assembler import assemble
from vxe.machine import FloodMode, Simulator, flood_explore
from vxe.observe import RegisterWriteLog


def flood_boot(spec, source, **kwargs):
    image, base, symbols = assemble(spec, source)
    sim = Simulator(spec, mode=FloodMode(**kwargs))
    sim.load_image(image, base, entry=base)
    return sim, symbols


def enumerate_paths(spec, image, base, entry, depth=8):
    """Brute-force oracle: walk every branch combination concretely by
    forcing each conditional both ways, collecting (site, direction)."""
    from vxe.machine import MicroMode
    directions = set()
    # explore the decision tree breadth-first up to `depth` branches
    work = [[]]
    seen_paths = 0
    while work:
        decisions = work.pop()
        sim = Simulator(spec, mode=MicroMode())
        sim.load_image(image, base, entry=entry)
        log = []

        def controller(csim, cond, natural, _d=decisions, _log=log):
            index = len(_log)
            want = _d[index] if index < len(_d) else natural
            _log.append((csim.state.pc, want))
            return want

        sim._flood_hook = controller
        sim.run(op_budget=5000)
        seen_paths += 1
        for site, direction in log:
            directions.add((site, direction))
        for i in range(len(decisions), min(len(log), depth)):
            prefix = [d for _, d in log[:i]]
            work.append(prefix + [not log[i][1]])
    return directions, seen_paths


DOUBLE_DIAMOND = """
.org 0x0
  movi r2, 0x9000
  ld r1, [r2+0]
  movi r3, 1
  and r3, r1
  beq left
  movi r4, 1
  jmp join
left:
  movi r4, 2
join:
  movi r3, 2
  and r3, r1
  beq down
  movi r5, 1
  jmp out
down:
  movi r5, 2
out:
  halt
"""


class TestFloodExplore:
    def test_double_diamond_matches_brute_force_oracle(self, toy32):
        image, base, _ = assemble(toy32, DOUBLE_DIAMOND)
        oracle_dirs, oracle_paths = enumerate_paths(toy32, image, base, 0)
        assert oracle_paths >= 4
        sim, _ = flood_boot(toy32, DOUBLE_DIAMOND, k=1)
        result = flood_explore(sim, [0], k=1, op_budget=100_000)
        assert result.visited == oracle_dirs
        assert len(result.visited) == 4

    def test_visit_counter_never_exceeds_k(self, toy32):
        source = """
.org 0x0
  movi r1, 5
  movi r2, 1
loop:
  sub r1, r2
  bne loop
  halt
"""
        sim, syms = flood_boot(toy32, source, k=1)
        result = flood_explore(sim, [0], k=1, op_budget=100_000)
        loop_exit_site = syms["loop"] + 4
        taken = [d for s, d in result.visited if s == loop_exit_site]
        # with k=1 each direction of the loop branch is executed once
        assert sorted(taken) == [False, True]

    def test_termination_with_finite_budget(self, toy32):
        # an infinite loop: flood must stop at the counter bound
        source = """
.org 0x0
loop:
  movi r2, 0x9000
  ld r1, [r2+0]
  movi r3, 1
  and r3, r1
  beq loop
  jmp loop
"""
        sim, _ = flood_boot(toy32, source, k=3)
        result = flood_explore(sim, [0], k=3, op_budget=200_000)
        assert result.ops <= 200_000

    def test_observers_see_events_from_all_paths(self, toy32, workspace):
        with open(workspace.images["canids"], "rb") as f:
            data = f.read()
        sim = Simulator(toy32, mode=FloodMode(k=3))
        sim.load_image(data, 0, entry=0)
        logger = RegisterWriteLog(kinds=("memory_write",),
                                  addr_range=(0xFFF80200, 0xFFF80203))
        sim.observers.attach(logger.registration(), logger)
        flood_explore(sim, [0], k=3, op_budget=200_000)
        assert set(logger.values) == {0x7DF, 0x18DB33F1, 0x700}

    def test_faults_terminate_only_their_path(self, toy32):
        source = """
.org 0x0
  movi r2, 0x9000
  ld r1, [r2+0]
  movi r3, 1
  and r3, r1
  beq good
  movi r2, 0
  ibad:
  ret
good:
  movi r4, 7
  halt
"""
        # one arm returns through a garbage link register (fault), the
        # other halts; flood survives and visits both
        sim, _ = flood_boot(toy32, source, k=1)
        result = flood_explore(sim, [0], k=1, op_budget=50_000)
        assert len(result.visited) == 2
