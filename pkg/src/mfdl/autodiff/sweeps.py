"""Forward and reverse sweeps over a :class:`Graph`, first and second order."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DomainError, ShapeError
from . import ops
from .graph import Graph


@dataclass
class SweepBuffers:
    """Per-call scratch storage; one entry per node."""

    values: np.ndarray
    tangents: Optional[np.ndarray] = None
    adjoints: Optional[np.ndarray] = None
    hvp_adjoints: Optional[np.ndarray] = None
    ran: set = field(default_factory=set)


def _check_x(graph: Graph, x):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != graph.input_count:
        raise ShapeError(f"expected {graph.input_count} inputs, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("inputs must be finite")
    return x


def _check_vec(graph: Graph, v, name):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != graph.input_count:
        raise ShapeError(f"{name} must have length {graph.input_count}")
    return v


def _parent_values(values, node):
    p = node.parents
    a = values[p[0]]
    b = values[p[1]] if len(p) == 2 else 0.0
    c = node.constant if node.constant is not None else 0.0
    return a, b, c


def _forward(graph: Graph, x, order):
    """Values plus, per node, the local partials (and second partials)."""
    n = graph.input_count
    values = np.empty(len(graph.nodes))
    values[:n] = x
    partials = [None] * len(graph.nodes)
    seconds = [None] * len(graph.nodes)
    for j in range(n, len(graph.nodes)):
        node = graph.nodes[j]
        a, b, c = _parent_values(values, node)
        v, d, h = ops.local(node.op, a, b, c, order=order)
        if not math.isfinite(v):
            raise DomainError(f"node {j} ({node.op}) produced a non-finite value")
        values[j] = v
        partials[j] = d
        seconds[j] = h
    return values, partials, seconds


def evaluate(graph: Graph, x, return_buffers=False):
    """Forward sweep; returns f(x) (or the tuple of outputs for vector graphs)."""
    x = _check_x(graph, x)
    values, _, _ = _forward(graph, x, order=0)
    out = float(values[graph.outputs[0]]) if len(graph.outputs) == 1 else values[list(graph.outputs)].copy()
    if return_buffers:
        return out, SweepBuffers(values=values, ran={"values"})
    return out


def _tangents(graph, values, partials, v):
    n = graph.input_count
    t = np.zeros(len(graph.nodes))
    t[:n] = v
    for j in range(n, len(graph.nodes)):
        node = graph.nodes[j]
        d = partials[j]
        acc = d[0] * t[node.parents[0]]
        if len(node.parents) == 2:
            acc += d[1] * t[node.parents[1]]
        t[j] = acc
    return t


def forward_jvp(graph: Graph, x, v):
    """Return ``(f(x), D_v f(x))`` by propagating tangents from the inputs."""
    x = _check_x(graph, x)
    v = _check_vec(graph, v, "v")
    values, partials, _ = _forward(graph, x, order=1)
    t = _tangents(graph, values, partials, v)
    k = graph.output_index
    return float(values[k]), float(t[k])


def _adjoints(graph, partials, seed):
    y = np.array(seed, dtype=np.float64)
    for j in range(len(graph.nodes) - 1, graph.input_count - 1, -1):
        yj = y[j]
        if yj == 0.0:
            continue
        node = graph.nodes[j]
        d = partials[j]
        y[node.parents[0]] += yj * d[0]
        if len(node.parents) == 2:
            y[node.parents[1]] += yj * d[1]
    return y


def reverse_grad(graph: Graph, x, return_buffers=False):
    """Return ``(f(x), grad f(x))`` with one forward and one reverse sweep."""
    x = _check_x(graph, x)
    values, partials, _ = _forward(graph, x, order=1)
    k = graph.output_index
    seed = np.zeros(len(graph.nodes))
    seed[k] = 1.0
    y = _adjoints(graph, partials, seed)
    grad = y[: graph.input_count].copy()
    if return_buffers:
        return float(values[k]), grad, SweepBuffers(values=values, adjoints=y, ran={"values", "adjoints"})
    return float(values[k]), grad


def reverse_vjp(graph: Graph, x, u):
    """Return ``sum_k u_k grad f_k(x)`` for a graph with several outputs."""
    x = _check_x(graph, x)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.shape[0] != len(graph.outputs):
        raise ShapeError(f"u must have length {len(graph.outputs)}")
    values, partials, _ = _forward(graph, x, order=1)
    seed = np.zeros(len(graph.nodes))
    for uk, k in zip(u, graph.outputs):
        seed[k] += uk
    y = _adjoints(graph, partials, seed)
    return y[: graph.input_count].copy()


def forward_bilinear_hess(graph: Graph, x, u, v):
    """Return ``u^T (Hessian of f at x) v`` in a single forward sweep.

    Each node carries ``D_u x_j``, ``D_v x_j`` and ``D_uv x_j``; the last is
    propagated with the op's second partials.
    """
    x = _check_x(graph, x)
    u = _check_vec(graph, u, "u")
    v = _check_vec(graph, v, "v")
    values, partials, seconds = _forward(graph, x, order=2)
    tu = _tangents(graph, values, partials, u)
    tv = _tangents(graph, values, partials, v)
    n = graph.input_count
    tuv = np.zeros(len(graph.nodes))
    for j in range(n, len(graph.nodes)):
        node = graph.nodes[j]
        d, h = partials[j], seconds[j]
        p = node.parents[0]
        if len(node.parents) == 1:
            tuv[j] = d[0] * tuv[p] + h[0] * tu[p] * tv[p]
        else:
            q = node.parents[1]
            tuv[j] = (
                d[0] * tuv[p]
                + d[1] * tuv[q]
                + h[0] * tu[p] * tv[p]
                + h[1] * (tu[p] * tv[q] + tu[q] * tv[p])
                + h[2] * tu[q] * tv[q]
            )
    return float(tuv[graph.output_index])


def reverse_hvp(graph: Graph, x, v, return_buffers=False):
    """Return ``(Hessian of f at x) v``: forward tangent sweep, then a reverse
    sweep of ``y_j`` together with ``z_j = d(D_v f)/dx_j`` seeded by
    ``y_N = 1``, ``z_N = 0``."""
    x = _check_x(graph, x)
    v = _check_vec(graph, v, "v")
    values, partials, seconds = _forward(graph, x, order=2)
    t = _tangents(graph, values, partials, v)
    N = len(graph.nodes)
    y = np.zeros(N)
    z = np.zeros(N)
    y[graph.output_index] = 1.0
    for j in range(N - 1, graph.input_count - 1, -1):
        yj, zj = y[j], z[j]
        if yj == 0.0 and zj == 0.0:
            continue
        node = graph.nodes[j]
        d, h = partials[j], seconds[j]
        p = node.parents[0]
        if len(node.parents) == 1:
            y[p] += yj * d[0]
            # D_v of the edge partial dx_j/dx_p
            z[p] += zj * d[0] + yj * h[0] * t[p]
        else:
            q = node.parents[1]
            y[p] += yj * d[0]
            y[q] += yj * d[1]
            z[p] += zj * d[0] + yj * (h[0] * t[p] + h[1] * t[q])
            z[q] += zj * d[1] + yj * (h[1] * t[p] + h[2] * t[q])
    hv = z[: graph.input_count].copy()
    if return_buffers:
        buf = SweepBuffers(values=values, tangents=t, adjoints=y, hvp_adjoints=z,
                           ran={"values", "tangents", "adjoints", "hvp_adjoints"})
        return hv, buf
    return hv
