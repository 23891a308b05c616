"""Benchmark objectives with closed-form answers, used as optimizer oracles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Graph, evaluate, forward_bilinear_hess, reverse_grad
from .errors import PreconditionError, ShapeError
from .nn import MlpSpec, mlp_forward, mlp_graph, mlp_taylor, mlp_taylor_backward
from .rng import make_rng


@dataclass(frozen=True)
class ObjectiveHandle:
    """Callbacks for a smooth objective on R^n.

    ``hessian`` (dense) and ``hvp`` are optional; so are the known optimum
    and optimizer, which tests use as oracles.
    """

    n: int
    value: Callable
    grad: Callable
    hvp: Optional[Callable] = None
    hessian: Optional[Callable] = None
    known_minimum: Optional[float] = None
    known_minimizer: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None

    def value_and_grad(self, x):
        return self.value(x), self.grad(x)


def quadratic(Q, b=None, c=0.0) -> ObjectiveHandle:
    """f(x) = 1/2 x^T Q x - b^T x + c for symmetric positive definite Q."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    xs = np.linalg.solve(Q, b)
    fs = -0.5 * b @ xs + c
    L = float(np.max(np.linalg.eigvalsh(Q)))
    return ObjectiveHandle(
        n=n,
        value=lambda x: float(0.5 * x @ Q @ x - b @ x + c),
        grad=lambda x: Q @ x - b,
        hvp=lambda x, v: Q @ v,
        hessian=lambda x: Q,
        known_minimum=float(fs),
        known_minimizer=xs,
        lipschitz=L,
    )


def rosenbrock(a=1.0, b=100.0) -> ObjectiveHandle:
    def f(x):
        return float((a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2)

    def g(x):
        return np.array([-2 * (a - x[0]) - 4 * b * x[0] * (x[1] - x[0] ** 2), 2 * b * (x[1] - x[0] ** 2)])

    def H(x):
        return np.array([[2 - 4 * b * (x[1] - 3 * x[0] ** 2), -4 * b * x[0]], [-4 * b * x[0], 2 * b]])

    return ObjectiveHandle(2, f, g, hvp=lambda x, v: H(x) @ v, hessian=H,
                           known_minimum=0.0, known_minimizer=np.array([a, a * a]))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise ShapeError("X and Y need the same number (>= 1) of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def augmented(self):
        return np.hstack([self.X, np.ones((self.X.shape[0], 1))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Header row, last column is the target."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, :-1], data[:, -1])


def load_matrix_csv(path) -> np.ndarray:
    """All columns of a CSV with a header row, as a float matrix."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)


def least_squares(data: Dataset) -> ObjectiveHandle:
    """f(theta) = 1/2 |Y - [X, 1] theta|^2 with the normal-equation minimizer."""
    A, Y = data.augmented, data.Y
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise np.linalg.LinAlgError("augmented design matrix is rank deficient")
    AtA, AtY = A.T @ A, A.T @ Y
    theta = np.linalg.solve(AtA, AtY)
    r = Y - A @ theta
    return ObjectiveHandle(
        n=A.shape[1],
        value=lambda t: float(0.5 * np.sum((Y - A @ t) ** 2)),
        grad=lambda t: AtA @ t - AtY,
        hvp=lambda t, v: AtA @ v,
        hessian=lambda t: AtA,
        known_minimum=float(0.5 * r @ r),
        known_minimizer=theta,
        lipschitz=float(np.max(np.linalg.eigvalsh(AtA))),
    )


def _log_sigmoid(z):
    # log sigma(z) = -log(1 + e^{-z}), stable for both signs
    return -np.logaddexp(0.0, -z)


def logistic_nll(data: Dataset) -> ObjectiveHandle:
    """Negative log-likelihood of logistic regression on the augmented features."""
    A, Y = data.augmented, data.Y
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("logistic_nll needs binary targets in {0, 1}")

    def value(t):
        z = A @ t
        return float(-np.sum(Y * _log_sigmoid(z) + (1 - Y) * _log_sigmoid(-z)))

    def grad(t):
        s = 1.0 / (1.0 + np.exp(-(A @ t)))
        return A.T @ (s - Y)

    def hessian(t):
        s = 1.0 / (1.0 + np.exp(-(A @ t)))
        return (A * (s * (1 - s))[:, None]).T @ A

    def hvp(t, v):
        s = 1.0 / (1.0 + np.exp(-(A @ t)))
        return A.T @ (s * (1 - s) * (A @ v))

    return ObjectiveHandle(A.shape[1], value, grad, hvp=hvp, hessian=hessian)


@dataclass(frozen=True)
class SgFamily:
    """Components f_i(x) = (x - z_i)^2 with z_i evenly spaced on [-1, 1]."""

    z: np.ndarray

    @property
    def N(self):
        return len(self.z)

    def component(self, i, x):
        return (x - self.z[i]) ** 2

    def component_grad(self, i, x):
        return 2 * (x - self.z[i])

    def F(self, x):
        return x * x + float(np.mean(self.z ** 2))

    def F_grad(self, x):
        return 2 * x

    def handle(self) -> ObjectiveHandle:
        c = float(np.mean(self.z ** 2))
        return ObjectiveHandle(1, lambda x: float(x[0] ** 2 + c), lambda x: 2 * np.asarray(x, float),
                               hvp=lambda x, v: 2 * np.asarray(v, float), known_minimum=c,
                               known_minimizer=np.zeros(1), lipschitz=2.0)


def sg_family(N: int) -> SgFamily:
    if N < 3 or N % 2 == 0:
        raise ValueError("N must be an odd integer >= 3")
    i = np.arange(1, N + 1)
    return SgFamily(-1 + 2 * (i - 1) / (N - 1))


@dataclass(frozen=True)
class PdeModel:
    """u_theta(x) = phi_theta(x) * prod_i x_i (1 - x_i) (or phi alone if ``boundary`` is False)."""

    spec: MlpSpec
    boundary: bool = True

    def __post_init__(self):
        if self.spec.widths[-1] != 1:
            raise ShapeError("PDE networks have a scalar output")
        if self.spec.widths[0] > 3:
            raise PreconditionError("spatial dimension must be <= 3")
        if not self.spec.activation.smooth:
            raise PreconditionError(f"{self.spec.activation.kind} is not C^2; the Laplacian is undefined")

    def envelope(self, X):
        """B(x), dB/dx_k, d^2B/dx_k^2 for each k (arrays (N,), (N,d), (N,d))."""
        N, d = X.shape
        if not self.boundary:
            return np.ones(N), np.zeros((N, d)), np.zeros((N, d))
        q = X * (1 - X)
        B = np.prod(q, axis=1)
        Bk = np.empty_like(X)
        Bkk = np.empty_like(X)
        for k in range(d):
            rest = np.prod(np.delete(q, k, axis=1), axis=1)
            Bk[:, k] = rest * (1 - 2 * X[:, k])
            Bkk[:, k] = -2 * rest
        return B, Bk, Bkk

    def value(self, theta, X):
        B, _, _ = self.envelope(X)
        return mlp_forward(self.spec, theta, X)[:, 0] * B

    def laplacian(self, theta, X):
        """Sum over k of e_k^T (Hessian of u) e_k via Taylor-mode passes."""
        B, Bk, Bkk = self.envelope(X)
        lap = np.zeros(X.shape[0])
        for k in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[k] = 1.0
            phi, dphi, ddphi, _ = mlp_taylor(self.spec, theta, X, e, order=2)
            lap += B * ddphi[:, 0] + 2 * Bk[:, k] * dphi[:, 0] + Bkk[:, k] * phi[:, 0]
        return lap

    def laplacian_graph(self, theta, x):
        """Same quantity at one point through the autodiff graph (cross-check)."""
        g = mlp_graph(self.spec, theta)
        x = np.asarray(x, dtype=float)
        d = len(x)
        X = x[None, :]
        B, Bk, Bkk = self.envelope(X)
        phi = evaluate(g, x)
        _, grad = reverse_grad(g, x)
        total = 0.0
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            total += B[0] * forward_bilinear_hess(g, x, e, e) + 2 * Bk[0, k] * grad[k] + Bkk[0, k] * phi
        return total


@dataclass(frozen=True)
class GraphField:
    """Fixed (parameter-free) field given as an autodiff graph; Laplacian via graph sweeps."""

    graph: Graph

    def value(self, X):
        return np.array([evaluate(self.graph, x) for x in X])

    def gradient(self, X):
        return np.array([reverse_grad(self.graph, x)[1] for x in X])

    def laplacian(self, X):
        d = self.graph.input_count
        eye = np.eye(d)
        return np.array([sum(forward_bilinear_hess(self.graph, x, eye[k], eye[k]) for k in range(d)) for x in X])


def pde_losses(kind: str, u, f_source: Callable, sample_count: int, seed: int, dim: int = None) -> ObjectiveHandle:
    """PINN residual or deep-Ritz energy for -Laplace(u) = f on (0,1)^d.

    ``u`` is a :class:`PdeModel` (objective over theta) or a
    :class:`GraphField` (no parameters, ``n = 0``).  Sample points are drawn
    once from the seed and frozen.
    """
    if kind not in ("pinn_poisson", "deep_ritz"):
        raise ValueError(f"unknown PDE loss {kind!r}")
    if isinstance(u, GraphField):
        d = u.graph.input_count
    elif isinstance(u, PdeModel):
        d = u.spec.widths[0]
    else:
        raise TypeError("u must be a PdeModel or GraphField")
    if d > 3:
        raise PreconditionError("spatial dimension must be <= 3")
    X = make_rng(seed).uniform(0.0, 1.0, size=(sample_count, d))
    F = np.asarray(f_source(X), dtype=float).reshape(sample_count)
    N = sample_count

    if isinstance(u, GraphField):
        if kind == "pinn_poisson":
            val = float(np.mean((u.laplacian(X) + F) ** 2))
        else:
            G = u.gradient(X)
            val = float(np.mean(0.5 * np.sum(G * G, axis=1) - F * u.value(X)))
        return ObjectiveHandle(0, lambda t: val, lambda t: np.zeros(0))

    spec = u.spec
    eye = np.eye(d)

    def passes(theta, order):
        return [mlp_taylor(spec, theta, X, eye[k], order=order) for k in range(d)]

    def pinn(theta, want_grad):
        B, Bk, Bkk = u.envelope(X)
        ps = passes(theta, 2)
        lap = np.zeros(N)
        for k, (phi, dphi, ddphi, _) in enumerate(ps):
            lap += B * ddphi[:, 0] + 2 * Bk[:, k] * dphi[:, 0] + Bkk[:, k] * phi[:, 0]
        r = lap + F
        val = float(np.mean(r * r))
        if not want_grad:
            return val, None
        w = 2 * r / N
        g = np.zeros(spec.n_params)
        for k, (_, _, _, cache) in enumerate(ps):
            gk, _ = mlp_taylor_backward(cache, (w * Bkk[:, k])[:, None], (w * 2 * Bk[:, k])[:, None], (w * B)[:, None])
            g += gk
        return val, g

    def ritz(theta, want_grad):
        B, Bk, _ = u.envelope(X)
        ps = passes(theta, 1)
        phi = ps[0][0][:, 0]
        grads = np.stack([B * p[1][:, 0] + p[0][:, 0] * Bk[:, k] for k, p in enumerate(ps)], axis=1)
        uval = B * phi
        val = float(np.mean(0.5 * np.sum(grads * grads, axis=1) - F * uval))
        if not want_grad:
            return val, None
        g = np.zeros(spec.n_params)
        for k, (_, _, _, cache) in enumerate(ps):
            gphi = grads[:, k] * Bk[:, k] / N
            if k == 0:
                gphi = gphi - F * B / N
            gk, _ = mlp_taylor_backward(cache, gphi[:, None], (grads[:, k] * B / N)[:, None])
            g += gk
        return val, g

    fn = pinn if kind == "pinn_poisson" else ritz
    return ObjectiveHandle(spec.n_params, lambda t: fn(t, False)[0], lambda t: fn(t, True)[1])


def sin_pi_graph(d: int = 1) -> Graph:
    """u(x) = prod_i sin(pi x_i) as a graph (solves -Laplace u = d pi^2 u, zero on the boundary)."""
    from .autodiff.graph import GraphBuilder, chain, sin

    b = GraphBuilder(d)
    terms = [sin(b.unary("scale", x, math.pi)) for x in b.inputs]
    return b.build(chain("mul", terms))
