"""Scalar computational-graph automatic differentiation (forward and reverse, up to second order)."""

from .graph import Graph, GraphBuilder, Node, Var, chain, cos, erf, exp, log, relu, relu_shifted, sigmoid, sin, tanh
from .parse import ParseError, parse
from .sweeps import (
    SweepBuffers,
    evaluate,
    forward_bilinear_hess,
    forward_jvp,
    reverse_grad,
    reverse_hvp,
    reverse_vjp,
)

WORKED_EXAMPLE = "(div (mul (exp (scale 2 x2)) (cos (mul x2 x3))) (add x1 x2))"


def worked_example() -> Graph:
    """f(x) = exp(2 x2) cos(x2 x3) / (x1 + x2) as a 10-node graph."""
    return parse(WORKED_EXAMPLE, input_count=3)


__all__ = [
    "Graph", "GraphBuilder", "Node", "Var", "SweepBuffers", "ParseError",
    "parse", "evaluate", "forward_jvp", "reverse_grad", "reverse_vjp",
    "forward_bilinear_hess", "reverse_hvp", "worked_example", "WORKED_EXAMPLE",
    "chain", "sin", "cos", "exp", "log", "erf", "relu", "relu_shifted", "sigmoid", "tanh",
]
