"""Prefix-notation expression format for graph fixtures.

Grammar::

    expr := NUMBER | VAR | '(' OP expr+ ')'
    VAR  := 'x' INT            (1-based input index)

Ops taking a constant put it first: ``(scale 2 x1)``, ``(shift -1 x1)``,
``(relus 0.5 x1)``, ``(powi 3 x1)``.  ``add`` and ``mul`` accept more than two
operands and fold left-associatively.  A numeric operand of ``add``, ``sub``,
``mul`` or ``div`` is folded into a ``shift``/``scale`` node.
"""

from __future__ import annotations

import re

from . import ops
from .graph import Graph, GraphBuilder, Var

_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")
_VAR = re.compile(r"^x(\d+)$")


class ParseError(ValueError):
    pass


def _tokenize(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"bad token at {pos}")
        out.append(m.group(1))
        pos = m.end()
    return out


def _read(tokens, i):
    tok = tokens[i]
    if tok == "(":
        if i + 1 >= len(tokens):
            raise ParseError("unexpected end after '('")
        head = tokens[i + 1]
        items, i = [], i + 2
        while i < len(tokens) and tokens[i] != ")":
            item, i = _read(tokens, i)
            items.append(item)
        if i >= len(tokens):
            raise ParseError("missing ')'")
        return (head, items), i + 1
    if tok == ")":
        raise ParseError("unexpected ')'")
    return tok, i + 1


def _max_var(tree):
    if isinstance(tree, tuple):
        return max([0] + [_max_var(t) for t in tree[1]])
    m = _VAR.match(tree)
    return int(m.group(1)) if m else 0


def _number(tok):
    try:
        return float(tok)
    except (TypeError, ValueError):
        return None


def _emit(b: GraphBuilder, tree):
    if not isinstance(tree, tuple):
        m = _VAR.match(tree)
        if m:
            k = int(m.group(1))
            if k < 1:
                raise ParseError("variables are 1-based")
            return b.inputs[k - 1]
        c = _number(tree)
        if c is None:
            raise ParseError(f"unknown symbol {tree!r}")
        return c
    op, args = tree
    if op in ops.WITH_CONSTANT:
        if len(args) != 2:
            raise ParseError(f"{op} takes a constant and one operand")
        c = _number(args[0]) if not isinstance(args[0], tuple) else None
        if c is None:
            raise ParseError(f"{op} needs a numeric constant first")
        return b.unary(op, _as_var(b, _emit(b, args[1])), c)
    if op in ops.UNARY:
        if len(args) != 1:
            raise ParseError(f"{op} takes one operand")
        return b.unary(op, _as_var(b, _emit(b, args[0])))
    if op in ops.BINARY:
        vals = [_emit(b, a) for a in args]
        if len(vals) < 2 or (len(vals) > 2 and op not in ("add", "mul")):
            raise ParseError(f"{op} takes two operands")
        acc = vals[0]
        for nxt in vals[1:]:
            acc = _combine(b, op, acc, nxt)
        return acc
    raise ParseError(f"unknown op {op!r}")


def _combine(b, op, lhs, rhs):
    lnum, rnum = not isinstance(lhs, Var), not isinstance(rhs, Var)
    if lnum and rnum:
        return {"add": lhs + rhs, "sub": lhs - rhs, "mul": lhs * rhs, "div": lhs / rhs}[op]
    if op == "add":
        return lhs + rhs if not lnum else rhs + lhs
    if op == "sub":
        return lhs - rhs if not lnum else lhs - rhs  # Var.__rsub__ handles number - Var
    if op == "mul":
        return lhs * rhs if not lnum else rhs * lhs
    if op == "div":
        if rnum:
            return lhs / rhs
        return b.binary("div", _as_var(b, lhs), rhs)
    raise ParseError(op)


def _as_var(b, item):
    return item if isinstance(item, Var) else b.constant(item)


def parse(text: str, input_count: int | None = None) -> Graph:
    """Compile a prefix expression into a scalar :class:`Graph`."""
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression")
    tree, end = _read(tokens, 0)
    if end != len(tokens):
        raise ParseError("trailing tokens")
    n = max(_max_var(tree), input_count or 0, 1)
    b = GraphBuilder(n)
    out = _as_var(b, _emit(b, tree))
    return b.build(out)
