"""Lift cache: memory and disk behavior, corruption, and sharing."""

import os

from vxe.archspec import ImageView, lift_block
from vxe.cache import LiftCache
from vxe.ir import render_block


def lift_corpus_block(toy32, workspace):
    with open(workspace.images["canids"], "rb") as f:
        return ImageView(f.read(), 0)


class TestMemoryCache:
    def test_get_after_put_identical_text(self, toy32, workspace, tmp_path):
        cache = LiftCache(str(tmp_path))
        view = lift_corpus_block(toy32, workspace)
        block = lift_block(toy32, view, 0, optimize=True, cache=cache)
        key = cache.key_for(toy32, 0, view.read_bytes(0, 4 * len(
            block.instructions)))
        hit = cache.get(key, toy32)
        assert hit is not None
        assert render_block(hit, toy32) == render_block(block, toy32)

    def test_second_lift_no_saturation(self, toy32, workspace):
        cache = LiftCache()
        view = lift_corpus_block(toy32, workspace)
        lift_block(toy32, view, 0, optimize=True, cache=cache)
        before = cache.saturation_calls
        lift_block(toy32, view, 0, optimize=True, cache=cache)
        assert cache.saturation_calls == before

    def test_two_simulators_share_one_saturation_pass(self, toy32,
                                                      workspace):
        from vxe.machine import Simulator
        cache = LiftCache()
        with open(workspace.images["hello"], "rb") as f:
            data = f.read()
        for _ in range(2):
            sim = Simulator(toy32, cache=cache)
            sim.load_image(data, 0, entry=0)
            sim.state.map_page(0x7000)
            sim.run(op_budget=1000)
        blocks_lifted = cache.misses
        assert cache.saturation_calls == blocks_lifted
        assert cache.hits >= 1


class TestDiskCache:
    def test_disk_round_trip_byte_identical(self, toy32, workspace,
                                            tmp_path):
        view = lift_corpus_block(toy32, workspace)
        first = LiftCache(str(tmp_path))
        block = lift_block(toy32, view, 0, optimize=True, cache=first)
        raw = view.read_bytes(0, 4 * len(block.instructions))
        key = first.key_for(toy32, 0, raw)

        second = LiftCache(str(tmp_path))   # fresh memory, same disk
        hit = second.get(key, toy32)
        assert hit is not None
        assert render_block(hit, toy32) == render_block(block, toy32)
        path = os.path.join(str(tmp_path), key[:2], key + ".ir")
        assert os.path.exists(path)

    def test_truncated_entry_is_miss_and_evicted(self, toy32, workspace,
                                                 tmp_path):
        view = lift_corpus_block(toy32, workspace)
        cache = LiftCache(str(tmp_path))
        block = lift_block(toy32, view, 0, optimize=True, cache=cache)
        raw = view.read_bytes(0, 4 * len(block.instructions))
        key = cache.key_for(toy32, 0, raw)
        path = os.path.join(str(tmp_path), key[:2], key + ".ir")
        with open(path, "r+") as f:
            f.truncate(20)
        fresh = LiftCache(str(tmp_path))
        assert fresh.get(key, toy32) is None
        assert not os.path.exists(path)

    def test_unwritable_directory_degrades_to_memory(self, toy32,
                                                     workspace, tmp_path):
        view = lift_corpus_block(toy32, workspace)
        blocked = tmp_path / "blocked"
        blocked.mkdir()
        os.chmod(blocked, 0o500)
        cache = LiftCache(str(blocked / "sub"))
        block = lift_block(toy32, view, 0, optimize=True, cache=cache)
        assert block.instructions
        os.chmod(blocked, 0o700)


class TestAssembler:
    def test_round_trip_through_disassembly(self, toy32):
        from vxe.assembler import assemble
        from vxe.archspec import lift_instruction
        source = """
.org 0x100
start:
  movi r1, 0x1234
  add r1, r2
  beq start
  halt
"""
        image, base, symbols = assemble(toy32, source)
        assert base == 0x100
        assert symbols["start"] == 0x100
        insn = lift_instruction(toy32, image[:4], 0x100)
        assert insn.asm_text == "movi r1, 0x1234"

    def test_label_in_operand(self, toy32):
        from vxe.assembler import assemble
        image, _, symbols = assemble(toy32, """
.org 0x0
  jmp target
target:
  halt
""")
        assert image[0:1] == b"\x0f"
        assert int.from_bytes(image[2:4], "big") == symbols["target"]

    def test_field_overflow_rejected(self, toy32):
        from vxe.assembler import AsmError, assemble
        import pytest
        with pytest.raises(AsmError, match="does not fit"):
            assemble(toy32, ".org 0x0\nmovi r1, 0x12345\n")

    def test_unknown_symbol_reported_with_line(self, toy32):
        from vxe.assembler import AsmError, assemble
        import pytest
        with pytest.raises(AsmError, match="line 2"):
            assemble(toy32, ".org 0x0\njmp nowhere\n")

    def test_data_directives(self, toy32):
        from vxe.assembler import assemble
        image, base, _ = assemble(toy32, """
.org 0x0
  .byte 1, 2
  .half 0x3344
  .word 0x55667788
  .ascii "ab"
  .zero 2
""")
        assert image == (bytes([1, 2]) + b"\x44\x33"
                         + b"\x88\x77\x66\x55" + b"ab" + b"\x00\x00")
