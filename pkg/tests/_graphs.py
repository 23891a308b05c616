"""Random graph generators shared by the autodiff and acceptance tests.

Graphs are built from guarded compositions so every node stays finite on
inputs in [-2, 2]: divisions are by 1 + b^2, logs take 1 + b^2 and
exponentials see a tanh-squashed argument.
"""

import numpy as np

from mfdl.autodiff import GraphBuilder


def _squash(b, v):
    return b.unary("tanh", v)


def _one_plus_sq(b, v):
    return b.unary("shift", b.unary("powi", _squash(b, v), 2), 1.0)


def _layer_op(b, rng, u, w, smooth=True):
    choice = rng.integers(0, 12 if smooth else 13)
    if choice == 0:
        return b.binary("add", u, w)
    if choice == 1:
        return b.binary("sub", u, w)
    if choice == 2:
        return b.binary("mul", _squash(b, u), w)
    if choice == 3:
        return b.binary("div", u, _one_plus_sq(b, w))
    if choice == 4:
        return b.unary("sin", u)
    if choice == 5:
        return b.unary("cos", u)
    if choice == 6:
        return b.unary("exp", _squash(b, u))
    if choice == 7:
        return b.unary("log", _one_plus_sq(b, u))
    if choice == 8:
        return b.unary("erf", u)
    if choice == 9:
        return b.unary("sigmoid", b.unary("scale", u, float(rng.uniform(-2, 2))))
    if choice == 10:
        return b.unary("shift", b.unary("neg", u), float(rng.uniform(-1, 1)))
    if choice == 11:
        return b.unary("powi", _squash(b, u), int(rng.integers(2, 4)))
    return b.unary("relus", u, float(rng.uniform(-1, 1)))


def random_graph(rng, n_inputs=None, depth=None, width=3, smooth=True):
    """Layered random graph with ``depth`` (<= 8) composite layers and a sum output."""
    n = int(rng.integers(1, 11)) if n_inputs is None else n_inputs
    depth = int(rng.integers(1, 9)) if depth is None else depth
    b = GraphBuilder(n)
    layer = list(b.inputs)
    for _ in range(depth):
        nxt = []
        for _ in range(width):
            u = layer[rng.integers(len(layer))]
            w = layer[rng.integers(len(layer))]
            nxt.append(_layer_op(b, rng, u, w, smooth))
        layer = nxt
    out = layer[0]
    for v in layer[1:]:
        out = b.binary("add", out, v)
    return b.build(out)


def central_grad(fn, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g
