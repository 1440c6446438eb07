"""Spec parsing, instruction decoding, and lifting."""

import pytest
from hypothesis import given, settings, strategies as st

from vxe import archspec, ir
from vxe.archspec import DecodeError, SpecError, decode, lift_instruction


MINIMAL_HEADER = """
arch mini 1
endian little
space ram kind=ram size=0x10000 default
space register kind=register size=0x10
space unique kind=temporary size=0x20
reg A offset=0x0 size=4
reg PC offset=0x8 size=4 pc
"""


class TestParseSpec:
    def test_bundled_toy32_inventory(self, toy32):
        assert len(toy32.patterns) == 20
        mnemonics = {p.mnemonic for p in toy32.patterns}
        assert mnemonics == {
            "NOP", "MOVI", "MOV", "ADD", "SUB", "XOR", "AND", "OR", "SHL",
            "SHR", "LD", "ST", "CMP", "BEQ", "BNE", "JMP", "CALL", "RET",
            "HALT", "REPMOV"}
        # R0-R15, PC, SR, four flags, and the eight sub-register overlaps
        assert len(toy32.registers) == 30
        for name in ("R0", "R15", "PC", "SR", "ZF", "CF", "SF", "OF",
                     "R0L", "R3L", "R0W", "R3W"):
            assert name in toy32.registers

    def test_ambiguous_fixed_bits_rejected(self):
        text = MINIMAL_HEADER + """
insn ONE bits=16 match="00000001........" asm="one" {
    A = 1:4
}
insn TWO bits=16 match="00000001........" asm="two" {
    A = 2:4
}
"""
        with pytest.raises(SpecError, match="ambiguous"):
            archspec.parse_spec(text)

    def test_flag_inside_status_register_recorded_as_overlap(self, toy32):
        overlaps = toy32.register_overlaps()
        assert ("SR", "ZF") in overlaps or ("ZF", "SR") in overlaps
        assert ("R0", "R0L") in overlaps or ("R0L", "R0") in overlaps

    def test_register_outside_space_rejected(self):
        text = MINIMAL_HEADER.replace("reg A offset=0x0 size=4",
                                      "reg A offset=0xe size=4")
        text += '\ninsn NOP bits=16 match="0000000000000000" asm="nop"' \
                ' { PC = PC }\n'
        with pytest.raises(SpecError, match="outside register space"):
            archspec.parse_spec(text)

    def test_syntax_error_carries_line(self):
        with pytest.raises(SpecError, match="line 2"):
            archspec.parse_spec("arch x 1\nbogus directive\n")


class TestDecode:
    def test_xor_nibbles(self, toy32):
        pattern, fields, length = decode(toy32, bytes.fromhex("05110000"), 0)
        assert (pattern.mnemonic, fields, length) == ("XOR",
                                                      {"d": 1, "s": 1}, 4)

    def test_unknown_opcode_byte(self, toy32):
        with pytest.raises(DecodeError, match="0xdead"):
            decode(toy32, bytes.fromhex("FF000000"), 0xdead)

    def test_dppov_page_field(self, toy16dpp):
        pattern, fields, length = decode(toy16dpp, bytes.fromhex("c200"), 0)
        assert (pattern.mnemonic, fields, length) == ("DPPOV",
                                                      {"page": 2}, 2)

    @settings(max_examples=300, deadline=None)
    @given(raw=st.binary(min_size=4, max_size=4))
    def test_decode_determinism_property(self, toy32, raw):
        """At most one pattern matches any byte string (checked at parse
        time; re-verified here against the raw match tables)."""
        word = int.from_bytes(raw, "big")
        matching = [p for p in toy32.patterns
                    if (word & p.fixed_mask) == p.fixed_value]
        assert len(matching) <= 1


class TestLiftInstruction:
    def test_xor_lifts_to_pinned_four_ops(self, toy32):
        insn = lift_instruction(toy32, bytes.fromhex("05110000"), 0)
        lines = [ir.render_op(op, toy32) for op in insn.ops]
        assert lines == [
            "u[0x0:4] = INT_XOR r[0x4:4], r[0x4:4]",
            "r[0x4:4] = COPY u[0x0:4]",
            "r[0x44:1] = INT_EQUAL u[0x0:4], #0x0:4",
            "r[0x45:1] = COPY #0x0:1",
        ]
        assert insn.asm_text == "xor r1, r1"

    def test_nop_is_pc_identity_placeholder(self, toy32):
        insn = lift_instruction(toy32, bytes.fromhex("00000000"), 0)
        assert [ir.render_op(op, toy32) for op in insn.ops] == [
            "r[0x40:4] = COPY r[0x40:4]"]

    def test_repmov_loops_back_to_op_zero(self, toy32):
        insn = lift_instruction(toy32, bytes.fromhex("13120000"), 0)
        cbranches = [op for op in insn.ops if op.opcode == "CBRANCH"]
        assert len(cbranches) == 1
        target = cbranches[0].inputs[0]
        assert target.space == toy32.spaces.const.id
        assert target.offset == 0

    def test_temporaries_restart_at_zero_each_instruction(self, toy32):
        first = lift_instruction(toy32, bytes.fromhex("05110000"), 0)
        second = lift_instruction(toy32, bytes.fromhex("05220000"), 4)
        temp = toy32.spaces.temp.id
        offsets_first = {op.output.offset for op in first.ops
                         if op.output and op.output.space == temp}
        offsets_second = {op.output.offset for op in second.ops
                          if op.output and op.output.space == temp}
        assert offsets_first == offsets_second == {0}

    def test_lift_purity(self, toy32):
        a = lift_instruction(toy32, bytes.fromhex("03120000"), 0x100)
        b = lift_instruction(toy32, bytes.fromhex("03120000"), 0x100)
        assert a == b


class TestLiftBlock:
    def test_block_stops_at_first_control_transfer(self, toy32, workspace):
        with open(workspace.images["stall"], "rb") as f:
            view = archspec.ImageView(f.read(), 0)
        poll = workspace.symbol("stall", "poll_a")
        block = archspec.lift_block(toy32, view, poll)
        assert block.terminator_kind == "cbranch"
        assert len(block.instructions) == 4  # ld, movi, and, beq

    def test_decode_error_truncates_with_diagnostic(self, toy32):
        view = archspec.ImageView(bytes.fromhex("02120000" "FF000000"), 0)
        block = archspec.lift_block(toy32, view, 0)
        assert len(block.instructions) == 1
        assert block.terminator_kind == "fallthrough"
        assert any("no pattern" in d for d in block.diagnostics)

    def test_instruction_cap(self, toy32):
        view = archspec.ImageView(bytes.fromhex("00000000") * 100, 0)
        block = archspec.lift_block(toy32, view, 0)
        assert len(block.instructions) == archspec.BLOCK_INSTRUCTION_CAP

    def test_optimized_and_plain_execute_identically(self, toy32,
                                                     workspace):
        from vxe.corpus import differential_check
        from vxe.optimizer import optimize_block
        with open(workspace.images["canids"], "rb") as f:
            view = archspec.ImageView(f.read(), 0)
        block = archspec.lift_block(toy32, view, 0)
        optimized = archspec.lift_block(toy32, view, 0, optimize=True)
        for seed in range(10):
            assert differential_check(toy32, block, optimized, seed)
