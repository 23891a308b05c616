"""Stochastic optimizer steps as pure state transitions, plus Muon's Newton-Schulz orthogonalizer."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError, NumericError, ShapeError

METHODS = ("sgd", "momentum", "adagrad", "rmsprop", "adam", "adamw", "muon")

DEFAULTS = {
    "sgd": dict(alpha=1e-3),
    "momentum": dict(alpha=1e-3, beta1=0.9),
    "adagrad": dict(alpha=1e-3, eps=1e-8),
    "rmsprop": dict(alpha=1e-3, beta2=0.99, eps=1e-8),
    "adam": dict(alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8),
    "adamw": dict(alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01),
    # non-matrix parameters under muon fall back to adamw with these values
    "muon": dict(alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01),
}

NS_COEFFS = (3.4445, -4.775, 2.0315)


@dataclass(frozen=True)
class MuonConfig:
    coeffs: tuple = NS_COEFFS
    ns_iters: int = 5
    ns_eps: float = 1e-7
    momentum: float = 0.95
    weight_decay: float = 0.1
    alpha: float = 1e-3
    shape_scale: bool = False
    matrix_shapes: tuple = ()

    def __post_init__(self):
        if self.ns_iters < 1:
            raise ValueError("ns_iters must be >= 1")
        for r, c in self.matrix_shapes:
            if r < 1 or c < 1:
                raise ValueError("matrix shapes need rows, cols >= 1")


@dataclass(frozen=True)
class StochState:
    """Optimizer state; ``k`` counts steps starting at 1."""

    method: str
    k: int
    m: np.ndarray
    v: np.ndarray
    hyper: dict
    M: tuple = ()
    muon: Optional[MuonConfig] = None
    matrix_slices: tuple = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.k < 1:
            raise ValueError("k starts at 1")


def init_state(method: str, n: int, muon: Optional[MuonConfig] = None, matrix_slices=(), **hyper) -> StochState:
    """Fresh state for ``n`` parameters; ``hyper`` overrides the method defaults.

    For muon, ``matrix_slices`` lists ``(start, stop, (rows, cols))`` of the
    weight matrices inside the flat vector (see :func:`mfdl.nn.param_slices`).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    unknown = set(hyper) - set(DEFAULTS[method])
    if unknown:
        raise ValueError(f"unknown hyperparameters for {method}: {sorted(unknown)}")
    h = dict(DEFAULTS[method])
    h.update({k: float(v) for k, v in hyper.items()})
    M = ()
    if method == "muon":
        muon = muon or MuonConfig(matrix_shapes=tuple(s[2] for s in matrix_slices))
        for start, stop, (r, c) in matrix_slices:
            if stop - start != r * c:
                raise ShapeError("matrix slice length does not match its shape")
        M = tuple(np.zeros(shape) for _, _, shape in matrix_slices)
    return StochState(method, 1, np.zeros(n), np.zeros(n), h, M, muon, tuple(matrix_slices))


def state_from_json(text: str, n: int) -> StochState:
    """Build a state from ``{"method": "adam", "alpha": 1e-3, ...}``."""
    d = json.loads(text) if isinstance(text, str) else dict(text)
    method = d.pop("method")
    return init_state(method, n, **d)


def _adaptive(state, theta, g, alpha, decoupled):
    h = state.hyper
    b1, b2, eps, k = h["beta1"], h["beta2"], h["eps"], state.k
    m = b1 * state.m + (1 - b1) * g
    v = b2 * state.v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** k)
    vhat = v / (1 - b2 ** k)
    step = mhat / (np.sqrt(vhat) + eps)
    if decoupled:
        new = theta - alpha * h["weight_decay"] * theta - alpha * step
    else:
        new = theta - alpha * step
    return new, m, v


def stochastic_step(state: StochState, theta, g, alpha: Optional[float] = None):
    """Apply one update of ``state.method``; returns ``(theta', state')``.

    ``alpha`` overrides the configured step size for this step (schedules).
    Inputs are never mutated.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != theta.shape or theta.shape != state.m.shape:
        raise ShapeError("theta, g and the state buffers must have the same shape")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient estimate", last=theta)
    h = state.hyper
    a = h["alpha"] if alpha is None else float(alpha)
    meth = state.method
    m, v, M = state.m, state.v, state.M
    if meth == "sgd":
        new = theta - a * g
    elif meth == "momentum":
        m = h["beta1"] * state.m + (1 - h["beta1"]) * g
        new = theta - a * m
    elif meth == "adagrad":
        v = state.v + g * g
        new = theta - a * g / (np.sqrt(v) + h["eps"])
    elif meth == "rmsprop":
        v = h["beta2"] * state.v + (1 - h["beta2"]) * g * g
        new = theta - a * g / (np.sqrt(v) + h["eps"])
    elif meth in ("adam", "adamw"):
        new, m, v = _adaptive(state, theta, g, a, decoupled=meth == "adamw")
    else:
        new, m, v = _adaptive(state, theta, g, a, decoupled=True)
        cfg = state.muon
        Ws = [theta[s:e].reshape(shape) for s, e, shape in state.matrix_slices]
        Gs = [g[s:e].reshape(shape) for s, e, shape in state.matrix_slices]
        Ws, M = muon_step(cfg, Ws, Gs, state.M, alpha=None if alpha is None else a)
        for (s, e, _), W in zip(state.matrix_slices, Ws):
            new[s:e] = W.reshape(-1)
        M = tuple(M)
    return new, dataclasses.replace(state, k=state.k + 1, m=m, v=v, M=M)


def newton_schulz(M, coeffs=NS_COEFFS, K=5, eps=1e-7):
    """Approximate U V^T of M = U S V^T by iterating the odd quintic.

    M is first scaled by 1 / (|M|_F + eps) so all singular values are <= 1.
    Iteration stops after ``K`` steps or once the relative change of the
    iterate drops below ``eps``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ShapeError("newton_schulz expects a matrix")
    norm = float(np.linalg.norm(M))
    if norm == 0.0:
        raise DomainError("cannot orthogonalize the zero matrix")
    a, b, c = coeffs
    transposed = M.shape[0] > M.shape[1]
    X = M.T if transposed else M            # work with the smaller Gram matrix
    X = X / (norm + eps)
    for _ in range(K):
        A = X @ X.T
        X_new = a * X + (b * A + c * (A @ A)) @ X
        change = np.linalg.norm(X_new - X) / max(np.linalg.norm(X), 1e-300)
        X = X_new
        if change < eps:
            break
    return X.T if transposed else X


def muon_step(cfg: MuonConfig, W_slices: Sequence, g_slices: Sequence, M_buffers: Sequence, alpha=None):
    """One Muon update per weight matrix; returns ``(new_W, new_M)`` lists.

    M <- mu M + g, O = NS(M), W <- W - alpha lambda W - alpha O.
    """
    a = cfg.alpha if alpha is None else float(alpha)
    new_W, new_M = [], []
    for W, G, Mb in zip(W_slices, g_slices, M_buffers):
        W, G, Mb = (np.asarray(t, dtype=float) for t in (W, G, Mb))
        if not (W.shape == G.shape == Mb.shape) or W.ndim != 2:
            raise ShapeError("Muon slices must be matching 2-D matrices")
        if not np.all(np.isfinite(G)):
            raise NumericError("non-finite gradient estimate", last=W)
        Mn = cfg.momentum * Mb + G
        if np.any(Mn):
            O = newton_schulz(Mn, cfg.coeffs, cfg.ns_iters, cfg.ns_eps)
            if cfg.shape_scale:
                O = O * np.sqrt(max(1.0, W.shape[0] / W.shape[1]))
        else:
            O = np.zeros_like(W)
        new_W.append(W - a * cfg.weight_decay * W - a * O)
        new_M.append(Mn)
    return new_W, new_M


def ns_scalar_map(sigma, coeffs=NS_COEFFS, K=5):
    """phi applied K times to scalars: the singular-value oracle for :func:`newton_schulz`."""
    a, b, c = coeffs
    y = np.asarray(sigma, dtype=float)
    for _ in range(K):
        y = a * y + b * y ** 3 + c * y ** 5
    return y


def robbins_monro(k0: float = 10.0, c: float = 1.0):
    """Step schedule alpha_k = c / (k + k0), k counted from 0."""
    if k0 <= 0 or c <= 0:
        raise ValueError("k0 and c must be positive")
    return lambda k: c / (k + k0)


def sg_run(family, x0: float, steps: int, alpha, seed: int = 0, batch: int = 1, method: str = "sgd", **hyper):
    """Mini-batch SG on the components of an :class:`~mfdl.objectives.SgFamily`.

    ``alpha`` is a constant or a callable of the step index.  Component
    indices are drawn uniformly with replacement.  Returns the iterates
    x_0 .. x_steps as an array.
    """
    from ..rng import make_rng

    if batch < 1 or steps < 0:
        raise ValueError("need batch >= 1 and steps >= 0")
    rng = make_rng(seed, "sg_run")
    sched = alpha if callable(alpha) else (lambda k, a=float(alpha): a)
    state = init_state(method, 1, **hyper)
    theta = np.array([float(x0)])
    xs = np.empty(steps + 1)
    xs[0] = theta[0]
    for k in range(steps):
        idx = rng.integers(family.N, size=batch)
        g = np.array([np.mean(family.component_grad(idx, theta[0]))])
        theta, state = stochastic_step(state, theta, g, alpha=sched(k))
        xs[k + 1] = theta[0]
    return xs


def oscillation_band(xs, window: int = 1000, q: float = 90.0) -> float:
    """90th percentile of |x_k| over the last ``window`` iterates."""
    return float(np.percentile(np.abs(np.asarray(xs)[-window:]), q))
