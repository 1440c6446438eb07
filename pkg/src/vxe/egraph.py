"""E-graph with congruence closure, constant-fold analysis, and rewriting.

The optimizer builds one e-graph per block, adding each SSA statement
incrementally and greedily applying the rewrite rules after every addition.
Nodes carry their operand width in bytes; every class tracks an optional
known-constant value, and discovering one materializes a constant node into
the class so extraction can pick it.

Rule inventory (all verified exhaustively at width 8 by the test suite):
x^x->0, x^0->x, x+0->x, x-0->x, x-x->0, x&x->x, x|x->x, x&0->0,
x&ones->x, x|0->x, x*0->0, x*1->x, x<<0->x, x>>0->x, eq(x,x)->1,
neq(x,x)->0, not(not(b))->b, trunc(zext(x))->x at matching widths, full
constant folding for every pure opcode, and commutative canonicalization
(constant operand to the right).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import bitops


class Inconsistency(RuntimeError):
    """Internal invariant broke; the optimizer fails open on this."""


@dataclass(frozen=True)
class ENode:
    """op is an IR opcode, "const", or "ref"; children are e-class ids."""
    op: str
    width: int
    children: tuple[int, ...] = ()
    payload: object = None    # const value | ref key | (space, epoch) tag


FOLDABLE = (set(bitops.BINARY_SAME_WIDTH) | set(bitops.COMPARISONS)
            | set(bitops.RESIZES) | {"BOOL_NOT"})


class EGraph:
    def __init__(self, rule_budget: int = 10_000):
        self.parent: list[int] = []
        self.nodes: dict[ENode, int] = {}       # hashcons
        self.classes: dict[int, set[ENode]] = {}
        self.const_of: dict[int, int] = {}      # class -> known value
        self.width_of: dict[int, int] = {}
        self.parents_of: dict[int, set[ENode]] = {}
        self.rule_budget = rule_budget
        self.rule_applications = 0
        self._dirty: list[int] = []

    # -- union-find ----------------------------------------------------

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def _fresh_class(self) -> int:
        cid = len(self.parent)
        self.parent.append(cid)
        self.classes[cid] = set()
        self.parents_of[cid] = set()
        return cid

    # -- node addition ---------------------------------------------------

    def canonicalize(self, node: ENode) -> ENode:
        children = tuple(self.find(c) for c in node.children)
        if (node.op in bitops.COMMUTATIVE and len(children) == 2
                and children[0] in self.const_of
                and children[1] not in self.const_of):
            children = (children[1], children[0])
        if children != node.children:
            node = ENode(node.op, node.width, children, node.payload)
        return node

    def add(self, node: ENode) -> int:
        node = self.canonicalize(node)
        existing = self.nodes.get(node)
        if existing is not None:
            return self.find(existing)
        cid = self._fresh_class()
        self.nodes[node] = cid
        self.classes[cid].add(node)
        self.width_of[cid] = node.width
        for child in node.children:
            self.parents_of[child].add(node)
        if node.op == "const":
            self.const_of[cid] = node.payload
        else:
            self._try_fold(node, cid)
        self._dirty.append(cid)
        return cid

    def add_const(self, value: int, width: int) -> int:
        return self.add(ENode("const", width,
                              payload=value & bitops.mask(width)))

    def _try_fold(self, node: ENode, cid: int) -> None:
        if node.op not in FOLDABLE:
            return
        values = []
        for child in node.children:
            v = self.const_of.get(self.find(child))
            if v is None:
                return
            values.append(v)
        in_width = self.width_of[self.find(node.children[0])]
        value = bitops.apply(node.op, values, in_width, node.width)
        self.merge(cid, self.add_const(value, node.width))

    # -- merging ---------------------------------------------------------

    def merge(self, a: int, b: int) -> int:
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self.width_of[a] != self.width_of[b]:
            raise Inconsistency(
                f"merging classes of widths {self.width_of[a]} "
                f"and {self.width_of[b]}")
        # union by size so large classes are never copied
        if len(self.classes[a]) < len(self.classes[b]):
            a, b = b, a
        ca, cb = self.const_of.get(a), self.const_of.get(b)
        if ca is not None and cb is not None and ca != cb:
            raise Inconsistency(f"merging constants {ca:#x} and {cb:#x}")
        self.parent[b] = a
        stale_parents = self.parents_of.pop(b)
        self.classes[a] |= self.classes.pop(b)
        self.parents_of[a] |= stale_parents
        if cb is not None and ca is None:
            self.const_of[a] = cb
            self.classes[a].add(ENode("const", self.width_of[a], payload=cb))
        self.const_of.pop(b, None)
        # only nodes that referenced the retired root need recanonicalizing
        self._rebuild_nodes(stale_parents)
        self._dirty.append(a)
        return a

    def _rebuild_nodes(self, nodes) -> None:
        """Restore the congruence invariant for the given parent nodes."""
        worklist = list(nodes)
        while worklist:
            node = worklist.pop()
            owner = self.nodes.pop(node, None)
            if owner is None:
                continue
            canon = self.canonicalize(node)
            owner = self.find(owner)
            if node in self.classes[owner]:
                self.classes[owner].discard(node)
                self.classes[owner].add(canon)
            existing = self.nodes.get(canon)
            if existing is not None and self.find(existing) != owner:
                self.merge(existing, owner)
            else:
                self.nodes[canon] = owner
                for child in canon.children:
                    self.parents_of[child].add(canon)
                self._try_fold(canon, owner)

    def equivalent(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)

    def enodes(self, cid: int) -> set[ENode]:
        return self.classes[self.find(cid)]

    # -- rewriting -------------------------------------------------------

    def saturate(self) -> None:
        """Apply the rule set to recently touched classes to fixpoint or
        until the budget is exhausted (budget exhaustion is not an error:
        the best representation found so far simply gets extracted)."""
        while self._dirty and self.rule_applications < self.rule_budget:
            cid = self.find(self._dirty.pop())
            for node in list(self.classes.get(cid, ())):
                if self.rule_applications >= self.rule_budget:
                    return
                self._apply_rules(node, cid)

    def _apply_rules(self, node: ENode, cid: int) -> None:
        cid = self.find(cid)
        op = node.op
        if op in ("const", "ref", "LOAD"):
            return
        kids = tuple(self.find(c) for c in node.children)
        width = node.width

        def fire(other: int):
            self.rule_applications += 1
            self.merge(cid, other)

        if len(kids) == 2:
            a, b = kids
            cb = self.const_of.get(b)
            same = a == b
            if op == "INT_XOR":
                if same:
                    return fire(self.add_const(0, width))
                if cb == 0:
                    return fire(a)
            elif op == "INT_ADD":
                if cb == 0:
                    return fire(a)
            elif op == "INT_SUB":
                if same:
                    return fire(self.add_const(0, width))
                if cb == 0:
                    return fire(a)
            elif op == "INT_AND":
                if same:
                    return fire(a)
                if cb == 0:
                    return fire(self.add_const(0, width))
                if cb == bitops.mask(width):
                    return fire(a)
            elif op == "INT_OR":
                if same:
                    return fire(a)
                if cb == 0:
                    return fire(a)
            elif op == "INT_MUL":
                if cb == 0:
                    return fire(self.add_const(0, width))
                if cb == 1:
                    return fire(a)
            elif op in ("INT_LEFT", "INT_RIGHT"):
                if cb == 0:
                    return fire(a)
            elif op == "INT_EQUAL":
                if same:
                    return fire(self.add_const(1, 1))
            elif op == "INT_NOTEQUAL":
                if same:
                    return fire(self.add_const(0, 1))
        elif op == "BOOL_NOT":
            (a,) = kids
            for inner in self.enodes(a):
                if inner.op == "BOOL_NOT":
                    return fire(self.find(inner.children[0]))
        elif op == "TRUNC":
            (a,) = kids
            for inner in self.enodes(a):
                if (inner.op == "INT_ZEXT"
                        and self.width_of[self.find(inner.children[0])]
                        == width):
                    return fire(self.find(inner.children[0]))
