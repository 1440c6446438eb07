"""Bitvector semantics for the IR opcode set.

Single source of truth for how each opcode computes its result, shared by the
interpreter, the optimizer's constant folding, and symbolic-expression
evaluation so the three can never drift apart.

Widths are in bytes (matching VarNode sizes); all values are unsigned Python
ints already reduced mod 2**(8*width).
"""

from __future__ import annotations


def mask(width: int) -> int:
    return (1 << (8 * width)) - 1


def to_signed(value: int, width: int) -> int:
    sign = 1 << (8 * width - 1)
    return value - (1 << (8 * width)) if value & sign else value


def int_add(a: int, b: int, width: int) -> int:
    return (a + b) & mask(width)


def int_sub(a: int, b: int, width: int) -> int:
    return (a - b) & mask(width)


def int_mul(a: int, b: int, width: int) -> int:
    return (a * b) & mask(width)


def int_and(a: int, b: int, width: int) -> int:
    return a & b


def int_or(a: int, b: int, width: int) -> int:
    return a | b


def int_xor(a: int, b: int, width: int) -> int:
    return a ^ b


def int_left(a: int, b: int, width: int) -> int:
    if b >= 8 * width:
        return 0
    return (a << b) & mask(width)


def int_right(a: int, b: int, width: int) -> int:
    if b >= 8 * width:
        return 0
    return a >> b


def int_sright(a: int, b: int, width: int) -> int:
    s = to_signed(a, width)
    if b >= 8 * width:
        return mask(width) if s < 0 else 0
    return (s >> b) & mask(width)


def int_equal(a: int, b: int, width: int) -> int:
    return 1 if a == b else 0


def int_notequal(a: int, b: int, width: int) -> int:
    return 1 if a != b else 0


def int_less(a: int, b: int, width: int) -> int:
    return 1 if a < b else 0


def int_sless(a: int, b: int, width: int) -> int:
    return 1 if to_signed(a, width) < to_signed(b, width) else 0


def int_carry(a: int, b: int, width: int) -> int:
    return 1 if a + b > mask(width) else 0


def int_zext(a: int, in_width: int, out_width: int) -> int:
    return a


def int_sext(a: int, in_width: int, out_width: int) -> int:
    return to_signed(a, in_width) & mask(out_width)


def trunc(a: int, in_width: int, out_width: int) -> int:
    return a & mask(out_width)


def bool_not(a: int, width: int) -> int:
    # Defined on any byte value: 0 maps to 1, everything else to 0.
    return 1 if a == 0 else 0


# Binary opcodes whose two inputs share a width and whose output has the
# same width as the inputs.
BINARY_SAME_WIDTH = {
    "INT_ADD": int_add,
    "INT_SUB": int_sub,
    "INT_MUL": int_mul,
    "INT_AND": int_and,
    "INT_OR": int_or,
    "INT_XOR": int_xor,
    "INT_LEFT": int_left,
    "INT_RIGHT": int_right,
    "INT_SRIGHT": int_sright,
}

# Binary comparisons: equal input widths, 1-byte 0/1 output.
COMPARISONS = {
    "INT_EQUAL": int_equal,
    "INT_NOTEQUAL": int_notequal,
    "INT_LESS": int_less,
    "INT_SLESS": int_sless,
    "INT_CARRY": int_carry,
}

# Width-changing unary opcodes: (value, in_width, out_width) -> value.
RESIZES = {
    "INT_ZEXT": int_zext,
    "INT_SEXT": int_sext,
    "TRUNC": trunc,
}

COMMUTATIVE = {"INT_ADD", "INT_MUL", "INT_AND", "INT_OR", "INT_XOR",
               "INT_EQUAL", "INT_NOTEQUAL"}


def apply(opcode: str, operands: list[int], in_width: int, out_width: int) -> int:
    """Evaluate one pure opcode over concrete operand values.

    `in_width` is the width of the (first) input, `out_width` of the result;
    they differ only for the resize opcodes.
    """
    if opcode in BINARY_SAME_WIDTH:
        a, b = operands
        return BINARY_SAME_WIDTH[opcode](a, b, out_width)
    if opcode in COMPARISONS:
        a, b = operands
        return COMPARISONS[opcode](a, b, in_width)
    if opcode in RESIZES:
        (a,) = operands
        return RESIZES[opcode](a, in_width, out_width)
    if opcode == "BOOL_NOT":
        (a,) = operands
        return bool_not(a, in_width)
    if opcode == "COPY":
        (a,) = operands
        return a & mask(out_width)
    raise ValueError(f"not a pure data opcode: {opcode}")
