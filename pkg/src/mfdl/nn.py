"""Multilayer perceptrons over a flat parameter vector.

Parameters are packed layer by layer: the weight matrix ``W_l`` of shape
``(d_l, d_{l-1})`` in row-major order followed by the bias ``b_l``.  Hidden
layers apply an elementwise activation; the last affine layer feeds an
optional output wrapper (softmax, box, sigmoid, tanh, nonneg).

Besides the usual forward/backward pair this module has a Taylor-mode pass
(:func:`mlp_taylor`) that pushes a direction ``v`` through the network to get
``J v`` and ``v^T (d^2 y) v`` together with its reverse pass, which is what the
PDE losses and the neural-ODE divergence terms differentiate through.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapabilityError, PreconditionError, ShapeError

_erf = np.vectorize(math.erf, otypes=[float])
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Activation:
    """Activation kind with its hyperparameters.

    ``alpha`` is used by celu, ``beta`` by swish, ``glu`` = (v, w, b, c) by
    the scalar SwiGLU unit.
    """

    kind: str
    alpha: float = 1.0
    beta: float = 1.0
    glu: tuple = (1.0, 1.0, 0.0, 0.0)

    KINDS = ("sigmoid", "tanh", "relu", "elu", "celu", "gelu", "swish", "swiglu", "identity")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "celu" and not self.alpha > 0:
            raise ValueError("celu needs alpha > 0")
        if self.kind == "swish" and not self.beta > 0:
            raise ValueError("swish needs beta > 0")

    @property
    def smooth(self) -> bool:
        return self.kind not in ("relu", "elu", "celu")

    def derivs(self, z, order=1):
        """Return ``[s, s', s'', s''']`` truncated after ``order``."""
        z = np.asarray(z, dtype=np.float64)
        k = self.kind
        if k == "identity":
            out = [z.copy(), np.ones_like(z), np.zeros_like(z), np.zeros_like(z)]
        elif k == "sigmoid":
            s = _sigmoid(z)
            s1 = s * (1 - s)
            s2 = s1 * (1 - 2 * s)
            out = [s, s1, s2, s2 * (1 - 2 * s) - 2 * s1 * s1]
        elif k == "tanh":
            t = np.tanh(z)
            t1 = 1 - t * t
            t2 = -2 * t * t1
            out = [t, t1, t2, -2 * t1 * t1 - 2 * t * t2]
        elif k == "relu":
            out = [np.maximum(z, 0.0), (z > 0).astype(float), np.zeros_like(z), np.zeros_like(z)]
        elif k in ("elu", "celu"):
            a = 1.0 if k == "elu" else self.alpha
            neg = z < 0
            e = np.exp(np.where(neg, z, 0.0) / a)
            out = [
                np.where(neg, a * (e - 1), z),
                np.where(neg, e, 1.0),
                np.where(neg, e / a, 0.0),
                np.where(neg, e / (a * a), 0.0),
            ]
        elif k == "gelu":
            # erf(z/2) as printed, not the usual erf(z/sqrt 2)
            E = _INV_SQRT_PI * np.exp(-z * z / 4)
            q = 1 - z * z / 4
            out = [
                0.5 * z * (1 + _erf(z / 2)),
                0.5 * (1 + _erf(z / 2)) + 0.5 * z * E,
                E * q,
                -0.5 * z * E * (1 + q),
            ]
        elif k == "swish":
            b = self.beta
            s = _sigmoid(b * z)
            s1 = s * (1 - s)
            s2 = s1 * (1 - 2 * s)
            s3 = s2 * (1 - 2 * s) - 2 * s1 * s1
            out = [
                z * s,
                s + b * z * s1,
                2 * b * s1 + b * b * z * s2,
                3 * b * b * s2 + b ** 3 * z * s3,
            ]
        else:
            raise CapabilityError("swiglu is a gated scalar unit; use activation_apply")
        return out[: order + 1]


def activation_apply(kind, x):
    """Return ``(sigma(x), sigma'(x))`` for a scalar ``x``.

    ``kind`` is an :class:`Activation` or a plain kind name.
    """
    act = kind if isinstance(kind, Activation) else Activation(kind)
    if act.kind == "swiglu":
        v, w, b, c = act.glu
        u = w * x + b
        s = 1.0 / (1.0 + math.exp(-u)) if u >= 0 else math.exp(u) / (1.0 + math.exp(u))
        sw = u * s
        dsw = s + u * s * (1 - s)
        return (v * x + c) * sw, v * sw + (v * x + c) * dsw * w
    val, der = act.derivs(np.array([x], dtype=float), order=1)
    return float(val[0]), float(der[0])


@dataclass(frozen=True)
class Wrapper:
    kind: str = "none"
    low: Optional[tuple] = None
    high: Optional[tuple] = None

    KINDS = ("none", "softmax", "box", "nonneg", "sigmoid", "tanh")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown wrapper {self.kind!r}")
        if self.kind == "box":
            if self.low is None or self.high is None:
                raise ValueError("box wrapper needs low and high")
            if not np.all(np.asarray(self.low) < np.asarray(self.high)):
                raise ValueError("box wrapper needs low < high componentwise")

    def apply(self, z):
        k = self.kind
        if k == "none":
            return z
        if k == "sigmoid":
            return _sigmoid(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "box":
            lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
            return lo + (hi - lo) * _sigmoid(z)
        if k == "nonneg":
            return 0.5 * z * z
        zmax = np.max(z, axis=-1, keepdims=True)
        e = np.exp(z - zmax)
        return e / np.sum(e, axis=-1, keepdims=True)

    def backward(self, z, y, up):
        k = self.kind
        if k == "none":
            return up
        if k == "sigmoid":
            return up * y * (1 - y)
        if k == "tanh":
            return up * (1 - y * y)
        if k == "box":
            lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
            s = _sigmoid(z)
            return up * (hi - lo) * s * (1 - s)
        if k == "nonneg":
            return up * z
        return y * (up - np.sum(up * y, axis=-1, keepdims=True))


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activation: Activation = field(default_factory=lambda: Activation("tanh"))
    wrapper: Wrapper = field(default_factory=Wrapper)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", Activation(self.activation))
        if isinstance(self.wrapper, str):
            object.__setattr__(self, "wrapper", Wrapper(self.wrapper))
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if min(self.widths) < 1:
            raise ValueError("widths must be >= 1")
        if self.activation.kind == "swiglu":
            raise CapabilityError("swiglu is not available as a hidden-layer activation")
        if self.wrapper.kind == "box" and len(self.wrapper.low) != self.widths[-1]:
            raise ValueError("box bounds must match the output width")

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[l] * (w[l - 1] + 1) for l in range(1, len(w)))

    def to_json(self) -> str:
        d = {"widths": list(self.widths), "activation": self.activation.kind, "wrapper": self.wrapper.kind}
        if self.activation.kind == "celu":
            d["alpha"] = self.activation.alpha
        if self.activation.kind == "swish":
            d["beta"] = self.activation.beta
        if self.wrapper.kind == "box":
            d["low"], d["high"] = list(self.wrapper.low), list(self.wrapper.high)
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "MlpSpec":
        d = json.loads(text)
        act = Activation(d.get("activation", "tanh"), alpha=d.get("alpha", 1.0), beta=d.get("beta", 1.0))
        wrap = Wrapper(d.get("wrapper", "none"),
                       tuple(d["low"]) if "low" in d else None,
                       tuple(d["high"]) if "high" in d else None)
        return cls(tuple(d["widths"]), act, wrap)


def unpack(spec: MlpSpec, theta):
    """Views ``[(W_1, b_1), ..., (W_L, b_L)]`` into ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ShapeError(f"theta must have shape ({spec.n_params},), got {theta.shape}")
    out, pos, w = [], 0, spec.widths
    for l in range(1, len(w)):
        n_out, n_in = w[l], w[l - 1]
        W = theta[pos: pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        b = theta[pos: pos + n_out]
        pos += n_out
        out.append((W, b))
    return out


def mlp_init(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for W, b in unpack(spec, theta):
        n_out, n_in = W.shape
        r = math.sqrt(6.0 / (n_in + n_out))
        W[...] = rng.uniform(-r, r, size=W.shape)
    return theta


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.widths[0]:
        raise ShapeError(f"input must have trailing dimension {spec.widths[0]}, got {x.shape}")
    return X, single


@dataclass
class ForwardCache:
    inputs: list      # layer inputs a_0 .. a_{L-1}
    pre: list         # pre-activations z_1 .. z_L
    output: np.ndarray
    single: bool


def mlp_forward(spec: MlpSpec, theta, x, return_cache=False):
    """Evaluate the network on one input ``(d_0,)`` or a batch ``(N, d_0)``."""
    layers = unpack(spec, theta)
    X, single = _as_batch(spec, x)
    a, inputs, pre = X, [], []
    for l, (W, b) in enumerate(layers):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        if l < len(layers) - 1:
            a = spec.activation.derivs(z, order=0)[0]
    y = spec.wrapper.apply(pre[-1])
    out = y[0] if single else y
    if return_cache:
        return out, ForwardCache(inputs, pre, y, single)
    return out


def mlp_grad(spec: MlpSpec, theta, x, upstream, cache: Optional[ForwardCache] = None):
    """Reverse pass: gradient of ``upstream . y`` w.r.t. theta and x.

    For a batch the theta-gradient is summed over rows and the x-gradient is
    returned per row.
    """
    layers = unpack(spec, theta)
    if cache is None:
        _, cache = mlp_forward(spec, theta, x, return_cache=True)
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if up.ndim == 1 else up
    if up.shape != cache.output.shape:
        raise ShapeError(f"upstream must have shape {cache.output.shape[1:]}")
    g = np.zeros(spec.n_params)
    grads = unpack(spec, g)
    dz = spec.wrapper.backward(cache.pre[-1], cache.output, up)
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        gW, gb = grads[l]
        gW += dz.T @ cache.inputs[l]
        gb += dz.sum(axis=0)
        da = dz @ W
        if l > 0:
            dz = da * spec.activation.derivs(cache.pre[l - 1], order=1)[1]
    gx = da[0] if cache.single else da
    return g, gx


@dataclass
class TaylorCache:
    spec: MlpSpec
    layers: list
    acts: list       # per hidden layer: activation derivative arrays
    inputs: list     # (a, a_dot, a_ddot) fed to each affine layer
    pre: list        # (z, z_dot, z_ddot) per layer
    order: int


def mlp_taylor(spec: MlpSpec, theta, X, V, order=2):
    """Push direction ``V`` through the network (output wrapper must be none).

    Returns ``(y, y_dot, y_ddot, cache)`` with ``y_dot = J V`` and
    ``y_ddot = V^T (d^2 y) V`` per output component; ``y_ddot`` is None when
    ``order=1``.  ``X`` is ``(N, d_0)``; ``V`` is ``(N, d_0)`` or ``(d_0,)``.
    """
    if spec.wrapper.kind != "none":
        raise CapabilityError("Taylor-mode passes need wrapper 'none'")
    if order == 2 and not spec.activation.smooth:
        raise PreconditionError(f"{spec.activation.kind} has no usable second derivative")
    layers = unpack(spec, theta)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    V = np.broadcast_to(np.asarray(V, dtype=np.float64), X.shape)
    a, ad = X, V
    add = np.zeros_like(X) if order >= 2 else None
    acts, inputs, pre = [], [], []
    for l, (W, b) in enumerate(layers):
        inputs.append((a, ad, add))
        z = a @ W.T + b
        zd = ad @ W.T
        zdd = add @ W.T if order >= 2 else None
        pre.append((z, zd, zdd))
        if l < len(layers) - 1:
            s = spec.activation.derivs(z, order=order + 1)
            acts.append(s)
            a = s[0]
            ad = s[1] * zd
            if order >= 2:
                add = s[2] * zd * zd + s[1] * zdd
    z, zd, zdd = pre[-1]
    return z, zd, zdd, TaylorCache(spec, layers, acts, inputs, pre, order)


def mlp_taylor_backward(cache: TaylorCache, gy, gyd, gydd=None):
    """Reverse pass of :func:`mlp_taylor`.

    Given adjoints of ``(y, y_dot, y_ddot)`` returns ``(g_theta, g_X)``; the
    direction ``V`` is treated as a constant.
    """
    spec, layers = cache.spec, cache.layers
    g = np.zeros(spec.n_params)
    grads = unpack(spec, g)
    shape = cache.pre[-1][0].shape
    Z = np.broadcast_to(np.asarray(gy, float), shape) if gy is not None else np.zeros(shape)
    Zd = np.broadcast_to(np.asarray(gyd, float), shape) if gyd is not None else np.zeros(shape)
    Zdd = None
    if cache.order >= 2:
        Zdd = np.broadcast_to(np.asarray(gydd, float), shape) if gydd is not None else np.zeros(shape)
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        gW, gb = grads[l]
        a, ad, add = cache.inputs[l]
        gW += Z.T @ a + Zd.T @ ad
        gb += Z.sum(axis=0)
        A, Ad = Z @ W, Zd @ W
        if Zdd is not None:
            gW += Zdd.T @ add
            Add = Zdd @ W
        if l == 0:
            return g, A
        s = cache.acts[l - 1]
        z, zd, zdd = cache.pre[l - 1]
        Zd = Ad * s[1]
        Z = A * s[1] + Ad * s[2] * zd
        if Zdd is not None:
            Zd = Zd + Add * 2 * s[2] * zd
            Z = Z + Add * (s[3] * zd * zd + s[2] * zdd)
            Zdd = Add * s[1]
    raise AssertionError("unreachable")


def save_params(path, theta):
    """Write ``theta`` as an 8-byte little-endian length header followed by float64 LE values."""
    theta = np.ascontiguousarray(theta, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", theta.shape[0]))
        fh.write(theta.tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        data = fh.read()
    if len(data) != 8 * n:
        raise ShapeError(f"parameter file holds {len(data)} bytes, header says {n} values")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def param_slices(spec: MlpSpec):
    """(start, stop, shape) of each weight matrix inside the flat vector."""
    out, pos, w = [], 0, spec.widths
    for l in range(1, len(w)):
        n = w[l] * w[l - 1]
        out.append((pos, pos + n, (w[l], w[l - 1])))
        pos += n + w[l]
    return out


def mlp_graph(spec: MlpSpec, theta):
    """Compile the network at fixed ``theta`` into a scalar autodiff graph.

    Weights become ``scale``/``shift`` constants, so the graph inputs are the
    network inputs.  Used to cross-check the vectorized passes against the
    graph sweeps.
    """
    from .autodiff.graph import GraphBuilder, chain

    kind = spec.activation.kind
    if kind not in ("tanh", "sigmoid", "relu", "identity", "gelu", "swish"):
        raise CapabilityError(f"{kind} has no elementary-op graph form")
    if spec.wrapper.kind not in ("none", "sigmoid", "tanh"):
        raise CapabilityError(f"wrapper {spec.wrapper.kind} has no graph form")
    b = GraphBuilder(spec.widths[0])
    layer = list(b.inputs)
    layers = unpack(spec, theta)
    for l, (W, bias) in enumerate(layers):
        nxt = []
        for i in range(W.shape[0]):
            terms = [b.unary("scale", a, W[i, j]) for j, a in enumerate(layer)]
            z = b.unary("shift", chain("add", terms), bias[i])
            if l < len(layers) - 1:
                z = _graph_activation(b, spec.activation, z)
            elif spec.wrapper.kind != "none":
                z = b.unary(spec.wrapper.kind, z)
            nxt.append(z)
        layer = nxt
    return b.build(*layer)


def _graph_activation(b, act, z):
    k = act.kind
    if k == "identity":
        return z
    if k in ("tanh", "sigmoid", "relu"):
        return b.unary(k, z)
    if k == "gelu":
        e = b.unary("shift", b.unary("erf", b.unary("scale", z, 0.5)), 1.0)
        return b.unary("scale", b.binary("mul", z, e), 0.5)
    s = b.unary("sigmoid", b.unary("scale", z, act.beta))
    return b.binary("mul", z, s)
