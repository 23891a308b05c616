"""Elementary scalar operations with tabulated first and second derivatives.

Every op maps one or two parent values ``a`` (and ``b``) plus an optional
constant ``c`` to a value, the parent partials, and the parent second
partials.  Second partials are returned as ``(h_aa, h_ab, h_bb)``; unary ops
return zeros for the ``b`` slots.
"""

import math

from ..errors import DomainError

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

UNARY = frozenset(
    {"neg", "scale", "shift", "sin", "cos", "exp", "log", "erf", "relu",
     "relus", "sigmoid", "tanh", "powi"}
)
BINARY = frozenset({"add", "sub", "mul", "div"})
WITH_CONSTANT = frozenset({"scale", "shift", "relus", "powi"})
ALL_OPS = UNARY | BINARY


def arity(op):
    if op in BINARY:
        return 2
    if op in UNARY:
        return 1
    raise ValueError(f"unknown op {op!r}")


def _sigmoid(a):
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def value(op, a, b=0.0, c=0.0):
    """Value of a node; raises DomainError outside the op's domain."""
    return local(op, a, b, c, order=0)[0]


def local(op, a, b=0.0, c=0.0, order=2):
    """Return ``(value, (d_a, d_b), (h_aa, h_ab, h_bb))`` for one node.

    With ``order=0`` or ``order=1`` the unneeded entries are ``None``.
    """
    d = h = None
    if op == "add":
        v = a + b
        if order:
            d, h = (1.0, 1.0), (0.0, 0.0, 0.0)
    elif op == "sub":
        v = a - b
        if order:
            d, h = (1.0, -1.0), (0.0, 0.0, 0.0)
    elif op == "mul":
        v = a * b
        if order:
            d, h = (b, a), (0.0, 1.0, 0.0)
    elif op == "div":
        if b == 0.0:
            raise DomainError("division by zero")
        v = a / b
        if order:
            d = (1.0 / b, -a / (b * b))
            h = (0.0, -1.0 / (b * b), 2.0 * a / (b * b * b))
    elif op == "neg":
        v = -a
        if order:
            d, h = (-1.0, 0.0), (0.0, 0.0, 0.0)
    elif op == "scale":
        v = c * a
        if order:
            d, h = (c, 0.0), (0.0, 0.0, 0.0)
    elif op == "shift":
        v = a + c
        if order:
            d, h = (1.0, 0.0), (0.0, 0.0, 0.0)
    elif op == "sin":
        v = math.sin(a)
        if order:
            d, h = (math.cos(a), 0.0), (-v, 0.0, 0.0)
    elif op == "cos":
        v = math.cos(a)
        if order:
            d, h = (-math.sin(a), 0.0), (-v, 0.0, 0.0)
    elif op == "exp":
        try:
            v = math.exp(a)
        except OverflowError:
            raise DomainError(f"exp overflow at {a}") from None
        if order:
            d, h = (v, 0.0), (v, 0.0, 0.0)
    elif op == "log":
        if a <= 0.0:
            raise DomainError(f"log of non-positive value {a}")
        v = math.log(a)
        if order:
            d, h = (1.0 / a, 0.0), (-1.0 / (a * a), 0.0, 0.0)
    elif op == "erf":
        v = math.erf(a)
        if order:
            g = _TWO_OVER_SQRT_PI * math.exp(-a * a)
            d, h = (g, 0.0), (-2.0 * a * g, 0.0, 0.0)
    elif op in ("relu", "relus"):
        s = a - c if op == "relus" else a
        v = s if s > 0.0 else 0.0
        if order:
            # second derivative is 0 everywhere, kink included
            d, h = ((1.0 if s > 0.0 else 0.0), 0.0), (0.0, 0.0, 0.0)
    elif op == "sigmoid":
        v = _sigmoid(a)
        if order:
            s1 = v * (1.0 - v)
            d, h = (s1, 0.0), (s1 * (1.0 - 2.0 * v), 0.0, 0.0)
    elif op == "tanh":
        v = math.tanh(a)
        if order:
            t1 = 1.0 - v * v
            d, h = (t1, 0.0), (-2.0 * v * t1, 0.0, 0.0)
    elif op == "powi":
        n = int(c)
        if n < 0 and a == 0.0:
            raise DomainError("negative power of zero")
        v = a ** n
        if order:
            d1 = n * a ** (n - 1) if n != 0 else 0.0
            d2 = n * (n - 1) * a ** (n - 2) if n not in (0, 1) else 0.0
            d, h = (d1, 0.0), (d2, 0.0, 0.0)
    else:
        raise ValueError(f"unknown op {op!r}")
    return v, d, h
