"""Computational graphs of scalar elementary operations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from . import ops


@dataclass(frozen=True)
class Node:
    op: str
    parents: tuple
    constant: Optional[float] = None

    def __post_init__(self):
        if self.op == "input":
            if self.parents:
                raise ValueError("input nodes have no parents")
            return
        if len(self.parents) != ops.arity(self.op):
            raise ValueError(f"op {self.op} expects {ops.arity(self.op)} parents, got {len(self.parents)}")
        if self.op in ops.WITH_CONSTANT:
            if self.constant is None or not math.isfinite(self.constant):
                raise ValueError(f"op {self.op} needs a finite constant")
            if self.op == "powi" and float(self.constant) != int(self.constant):
                raise ValueError("powi needs an integer exponent")


@dataclass(frozen=True)
class Graph:
    """Topologically ordered DAG; nodes ``0..input_count-1`` are the inputs.

    ``outputs`` lists the result node indices (one for scalar functions).
    """

    nodes: tuple
    input_count: int
    outputs: tuple

    def __post_init__(self):
        for j, node in enumerate(self.nodes):
            if j < self.input_count:
                if node.op != "input":
                    raise ValueError(f"node {j} must be an input")
                continue
            if node.op == "input":
                raise ValueError(f"input node {j} after non-input nodes")
            for p in node.parents:
                if not 0 <= p < j:
                    raise ValueError(f"node {j} has parent {p} violating topological order")
        for k in self.outputs:
            if not 0 <= k < len(self.nodes):
                raise ValueError(f"output index {k} out of range")
        if not self.outputs:
            raise ValueError("graph needs at least one output")

    @property
    def output_index(self) -> int:
        if len(self.outputs) != 1:
            raise ValueError("graph has several outputs")
        return self.outputs[0]

    def __len__(self):
        return len(self.nodes)

    def children(self):
        """Child lists, built on demand (graphs stay immutable)."""
        ch = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            for slot, p in enumerate(node.parents):
                ch[p].append((i, slot))
        return ch


class Var:
    """Handle on a node under construction; supports arithmetic operators."""

    __slots__ = ("builder", "index")

    def __init__(self, builder: "GraphBuilder", index: int):
        self.builder = builder
        self.index = index

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        return self.builder.constant(float(other))

    def __add__(self, other):
        if not isinstance(other, Var):
            return self.builder.unary("shift", self, float(other))
        return self.builder.binary("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Var):
            return self.builder.unary("shift", self, -float(other))
        return self.builder.binary("sub", self, other)

    def __rsub__(self, other):
        return self.builder.unary("shift", -self, float(other))

    def __mul__(self, other):
        if not isinstance(other, Var):
            return self.builder.unary("scale", self, float(other))
        return self.builder.binary("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Var):
            return self.builder.unary("scale", self, 1.0 / float(other))
        return self.builder.binary("div", self, other)

    def __rtruediv__(self, other):
        return self.builder.binary("div", self._lift(other), self)

    def __neg__(self):
        return self.builder.unary("neg", self)

    def __pow__(self, n):
        return self.builder.unary("powi", self, int(n))


class GraphBuilder:
    """Incremental graph construction.

    >>> b = GraphBuilder(2)
    >>> x1, x2 = b.inputs
    >>> g = b.build(x1 * x2)
    """

    def __init__(self, input_count: int):
        self.nodes = [Node("input", ()) for _ in range(input_count)]
        self.input_count = input_count
        self.inputs = [Var(self, i) for i in range(input_count)]

    def _push(self, node):
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def unary(self, op, a: Var, constant=None):
        return self._push(Node(op, (a.index,), None if constant is None else float(constant)))

    def binary(self, op, a: Var, b: Var):
        return self._push(Node(op, (a.index, b.index)))

    def constant(self, c: float) -> Var:
        if self.input_count == 0:
            raise ValueError("constants need at least one input to anchor on")
        zero = self.unary("scale", self.inputs[0], 0.0)
        return self.unary("shift", zero, c)

    def apply(self, op, *args, constant=None):
        if len(args) == 1:
            return self.unary(op, args[0], constant)
        return self.binary(op, *args)

    def build(self, *outputs: Var) -> Graph:
        return Graph(tuple(self.nodes), self.input_count, tuple(o.index for o in outputs))


def _unary_fn(op):
    def fn(a: Var, constant=None) -> Var:
        return a.builder.unary(op, a, constant)
    fn.__name__ = op
    return fn


sin = _unary_fn("sin")
cos = _unary_fn("cos")
exp = _unary_fn("exp")
log = _unary_fn("log")
erf = _unary_fn("erf")
relu = _unary_fn("relu")
sigmoid = _unary_fn("sigmoid")
tanh = _unary_fn("tanh")


def relu_shifted(a: Var, shift: float) -> Var:
    """max(0, a - shift)."""
    return a.builder.unary("relus", a, shift)


def chain(op: str, terms: Sequence[Var]) -> Var:
    """Fold an n-ary add/mul left-associatively into binary nodes."""
    acc = terms[0]
    for t in terms[1:]:
        acc = acc.builder.binary(op, acc, t)
    return acc
