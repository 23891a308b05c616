"""Constructive ReLU approximations: sawtooth compositions, the square
approximator, the product network, the bump partition of unity and the
Taylor assembly built from them."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapabilityError, DomainError


def _unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise DomainError("x must lie in [0, 1]")
    return x


def _tooth(x):
    # g(x) = 2 relu(x) - 4 relu(x - 1/2) on [0, 1]
    return 2 * np.maximum(x, 0.0) - 4 * np.maximum(x - 0.5, 0.0)


def sawtooth(s: int, x):
    """g_s = g composed s times, g the hat function 2 min(x, 1 - x)."""
    if s < 1:
        raise ValueError("s must be >= 1")
    y = _unit_interval(x)
    for _ in range(s):
        y = _tooth(y)
    return y if y.ndim else float(y)


def square_approx(m: int, x):
    """f_m(x) = x - sum_{s=1}^m g_s(x) / 4^s, the piecewise-linear interpolant of x^2 on the 2^-m grid."""
    if m < 0:
        raise ValueError("m must be >= 0")
    x = _unit_interval(x)
    out = x.copy()
    y = x
    for s in range(1, m + 1):
        y = _tooth(y)
        out = out - y / 4.0 ** s
    return out if out.ndim else float(out)


def square_approx_graph(m: int):
    """The same f_m as an autodiff graph of relu / shifted-relu nodes (one input)."""
    from .autodiff.graph import GraphBuilder

    b = GraphBuilder(1)
    (x,) = b.inputs
    out, y = x, x
    for s in range(1, m + 1):
        y = b.unary("scale", b.unary("relu", y), 2.0) - b.unary("scale", b.unary("relus", y, 0.5), 4.0)
        out = out - b.unary("scale", y, 4.0 ** -s)
    return b.build(out)


def square_level(delta: float) -> int:
    """Smallest m with sup |f_m - x^2| = 2^-(2m+2) <= delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return max(0, math.ceil((-math.log2(delta) - 2) / 2))


def product_delta(eps: float, M: float) -> float:
    """Square-net accuracy making the product net eps-accurate on [-M, M]^2."""
    return eps / (6.0 * M * M)


def product_net(eps: float, M: float, a, b):
    """ReLU approximation of a*b on [-M, M]^2 with error at most eps.

    p(a, b) = 2 M^2 [q(|a+b|/2M) - q(|a|/2M) - q(|b|/2M)] where q is the
    square approximator with sup error delta = eps / (6 M^2).  The result is
    exactly 0 when a = 0 or b = 0.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if M < 1:
        raise ValueError("M must be >= 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(np.abs(a) > M) or np.any(np.abs(b) > M):
        raise DomainError("inputs must lie in [-M, M]")
    m = square_level(product_delta(eps, M))
    q = lambda t: square_approx(m, np.minimum(t, 1.0))
    out = 2 * M * M * (q(np.abs(a + b) / (2 * M)) - q(np.abs(a) / (2 * M)) - q(np.abs(b) / (2 * M)))
    return out if np.ndim(out) else float(out)


def psi(x):
    """Trapezoid: 1 on |x| <= 1, 2 - |x| on 1 <= |x| <= 2, 0 beyond."""
    ax = np.abs(np.asarray(x, dtype=float))
    return np.clip(2.0 - ax, 0.0, 1.0)


def partition_bump(N: int, m, x):
    """phi_m(x) = prod_i psi(3N (x_i - m_i / N))."""
    m = np.asarray(m, dtype=int)
    x = np.asarray(x, dtype=float)
    if np.any(m < 0) or np.any(m > N):
        raise DomainError("multi-index entries must lie in 0..N")
    if x.shape[-1] != m.shape[-1]:
        raise ValueError("x and m must have the same dimension")
    return np.prod(psi(3 * N * (x - m / N)), axis=-1)


@dataclass(frozen=True)
class TaylorOracle:
    """deriv(k, x) returns D^k f(x) for a multi-index tuple k."""

    deriv: Callable
    d: int
    k: int

    def value(self, x):
        return self.deriv((0,) * self.d, x)


def multi_indices(d: int, k: int):
    """All multi-indices with |k|_1 < k, in lexicographic order."""
    return [kv for kv in itertools.product(range(k), repeat=d) if sum(kv) < k]


def taylor_coefficients(oracle: TaylorOracle, N: int):
    """a_{m,k} = D^k f(m/N) / k! for every grid point m and |k|_1 < k."""
    coeffs = {}
    for m in itertools.product(range(N + 1), repeat=oracle.d):
        c = np.array(m, dtype=float) / N
        for kv in multi_indices(oracle.d, oracle.k):
            fact = math.prod(math.factorial(t) for t in kv)
            coeffs[(m, kv)] = float(oracle.deriv(kv, c)) / fact
    return coeffs


def _check_support(oracle, N):
    if oracle.d > 2 or oracle.k > 2 or N > 8 or min(oracle.d, oracle.k, N) < 1:
        raise CapabilityError("supported sizes are d <= 2, k <= 2, N <= 8")


def taylor_partition_approx(oracle: TaylorOracle, N: int, mode: str, x, delta: float = 1e-6, coeffs=None):
    """f_N(x) = sum_m phi_m(x) P_m(x) ("exact_fN") or its ReLU form h(x) ("relu_composed_h").

    In ``relu_composed_h`` each phi_m(x) (x - m/N)^k is replaced by nested
    product nets p_{delta, d+k} (each accurate to delta) applied from the
    last two factors outward.
    """
    _check_support(oracle, N)
    if mode not in ("exact_fN", "relu_composed_h"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=float)
    if x.shape != (oracle.d,):
        raise ValueError(f"x must have shape ({oracle.d},)")
    coeffs = taylor_coefficients(oracle, N) if coeffs is None else coeffs
    M = oracle.d + oracle.k
    total = 0.0
    for m in itertools.product(range(N + 1), repeat=oracle.d):
        c = np.array(m, dtype=float) / N
        bumps = list(psi(3 * N * (x - c)))
        if all(v == 0.0 for v in bumps):
            continue
        for kv in multi_indices(oracle.d, oracle.k):
            lin = [x[i] - c[i] for i in range(oracle.d) for _ in range(kv[i])]
            factors = bumps + lin
            if mode == "exact_fN":
                term = math.prod(factors)
            else:
                term = factors[-1]
                for fct in reversed(factors[:-1]):
                    term = product_net(delta, M, fct, term)
            total += coeffs[(m, kv)] * term
    return total


def relu_error_budget(oracle: TaylorOracle, N: int, delta: float, coeffs=None) -> float:
    """2^d d^k (d+k) delta, scaled by max |a_{m,k}| when the coefficients exceed 1."""
    coeffs = taylor_coefficients(oracle, N) if coeffs is None else coeffs
    amax = max(1.0, max(abs(v) for v in coeffs.values()))
    d, k = oracle.d, oracle.k
    return 2 ** d * d ** k * (d + k) * delta * amax
