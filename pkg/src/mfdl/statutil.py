"""Importance-sampled Monte Carlo, closed-form divergences and an Euler-Maruyama simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, DivergenceError, DomainError, PreconditionError
from .rng import make_rng


@dataclass(frozen=True)
class GaussianParams:
    """Mean and covariance; ``cov`` is a scalar (times I), a diagonal vector or a full SPD matrix."""

    mean: np.ndarray
    cov: object

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        d = mean.size
        if cov.ndim == 0:
            ok = cov > 0
        elif cov.ndim == 1:
            if cov.size != d:
                raise PreconditionError("diagonal covariance length must match the mean")
            ok = np.all(cov > 0)
        elif cov.shape == (d, d):
            try:
                np.linalg.cholesky(cov)
                ok = np.allclose(cov, cov.T)
            except np.linalg.LinAlgError:
                ok = False
        else:
            raise PreconditionError("covariance shape does not match the mean")
        if not ok:
            raise PreconditionError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def commuting(self) -> bool:
        return self.cov.ndim < 2

    def diag(self) -> np.ndarray:
        if self.cov.ndim == 2:
            raise CapabilityError("full covariance has no diagonal form")
        return np.broadcast_to(self.cov, (self.dim,)).astype(float)

    def matrix(self) -> np.ndarray:
        return self.cov if self.cov.ndim == 2 else np.diag(self.diag())


def _logdet(S):
    return np.linalg.slogdet(S)[1]


def entropy_gauss(p: GaussianParams) -> float:
    """d/2 (1 + log 2 pi) + 1/2 log det Sigma."""
    return 0.5 * p.dim * (1 + math.log(2 * math.pi)) + 0.5 * _logdet(p.matrix())


def kl_gauss(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) = 1/2 [log det S2/det S1 - n + tr(S2^-1 S1) + dm^T S2^-1 dm]."""
    if p.dim != q.dim:
        raise PreconditionError("dimensions differ")
    S1, S2 = p.matrix(), q.matrix()
    dm = q.mean - p.mean
    L = np.linalg.cholesky(S2)
    tr = np.trace(np.linalg.solve(S2, S1))
    z = np.linalg.solve(L, dm)
    val = 0.5 * (_logdet(S2) - _logdet(S1) - p.dim + tr + z @ z)
    return max(float(val), 0.0)   # clip rounding below zero


def kl_poisson(lam1: float, lam2: float) -> float:
    """lam1 log(lam1 / lam2) + lam2 - lam1."""
    if lam1 <= 0 or lam2 <= 0:
        raise PreconditionError("Poisson rates must be positive")
    return lam1 * math.log(lam1 / lam2) + lam2 - lam1


def _kl_discrete(p, r):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / r[mask])))


def js_discrete(p, q) -> float:
    """1/2 (KL(p, r) + KL(q, r)) with r the midpoint mixture; natural log, so the maximum is log 2."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise PreconditionError("mass tables must be 1-D and of equal length")
    for t in (p, q):
        if np.any(t < 0) or abs(t.sum() - 1) > 1e-9:
            raise PreconditionError("mass tables must be probability vectors")
    r = 0.5 * (p + q)
    # sum the two halves in a fixed order so JS(p, q) == JS(q, p) bit for bit
    a, b = _kl_discrete(p, r), _kl_discrete(q, r)
    return 0.5 * (min(a, b) + max(a, b))


def w2_gauss(p: GaussianParams, q: GaussianParams) -> float:
    """2-Wasserstein distance for commuting (scalar or diagonal) covariances."""
    if not (p.commuting and q.commuting):
        raise CapabilityError("w2_gauss supports scalar or diagonal covariances only")
    if p.dim != q.dim:
        raise PreconditionError("dimensions differ")
    s1, s2 = np.sqrt(p.diag()), np.sqrt(q.diag())
    return float(math.sqrt(np.sum((p.mean - q.mean) ** 2) + np.sum((s1 - s2) ** 2)))


DIVERGENCES = {
    "entropy_gauss": entropy_gauss,
    "kl_gauss": kl_gauss,
    "kl_poisson": kl_poisson,
    "js_discrete": js_discrete,
    "w2_gauss": w2_gauss,
}


def divergence(kind: str, *args) -> float:
    try:
        fn = DIVERGENCES[kind]
    except KeyError:
        raise ValueError(f"unknown divergence {kind!r}") from None
    return fn(*args)


@dataclass(frozen=True)
class ImportanceSpec:
    """h: integrand; sample(rng, N) draws from the proposal; density: its pdf."""

    h: Callable
    sample: Callable
    density: Callable
    N: int
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")


def importance_estimate(spec: ImportanceSpec, rng: Optional[np.random.Generator] = None):
    """J = mean h(X)/p(X) over N proposal draws; returns (J, sqrt(sample var / N))."""
    rng = make_rng(spec.seed, "importance") if rng is None else rng
    X = spec.sample(rng, spec.N)
    p = np.asarray(spec.density(X), dtype=float)
    if np.any(p <= 0):
        raise ZeroDivisionError("proposal density vanished at a drawn sample")
    w = np.asarray(spec.h(X), dtype=float) / p
    se = float(np.std(w, ddof=1) / math.sqrt(spec.N)) if spec.N > 1 else float("nan")
    return float(np.mean(w)), se


def uniform_spec(h, N, seed=0, low=0.0, high=1.0) -> ImportanceSpec:
    """Importance spec with a uniform proposal on [low, high]."""
    width = high - low
    return ImportanceSpec(
        h,
        lambda rng, n: rng.uniform(low, high, n),
        lambda x: np.full(np.shape(x), 1.0 / width),
        N,
        seed,
    )


@dataclass
class EMResult:
    x_T: np.ndarray          # (paths, d)
    W_T: np.ndarray          # (paths, d) accumulated Brownian increments
    ito: Optional[np.ndarray]  # (paths, d) sum_k X_k dW_k when requested
    h: float
    steps: int


def euler_maruyama(f, g, x0, T: float, h: float, seed: int = 0, paths: int = 1, ito: bool = False) -> EMResult:
    """X_{k+1} = X_k + f(t_k, X_k) h + g(t_k, X_k) sqrt(h) zeta_k with diagonal noise.

    The step is adjusted to T / round(T / h) so the grid ends exactly at T.
    With ``ito=True`` the sums sum_k X_k dW_k are accumulated.
    """
    if not h > 0 or not T > 0:
        raise DomainError("T and h must be positive")
    if paths < 1:
        raise ValueError("paths must be >= 1")
    n = max(1, int(round(T / h)))
    h = T / n
    x = np.tile(np.atleast_1d(np.asarray(x0, dtype=float)), (paths, 1))
    W = np.zeros_like(x)
    acc = np.zeros_like(x) if ito else None
    rng = make_rng(seed, "euler_maruyama")
    sq = math.sqrt(h)
    for k in range(n):
        t = k * h
        dW = sq * rng.standard_normal(x.shape)
        if ito:
            acc += x * dW
        x = x + f(t, x) * h + g(t, x) * dW
        W += dW
        if not np.all(np.isfinite(x)):
            raise DivergenceError("Euler-Maruyama path blew up", last=x)
    return EMResult(x, W, acc, h, n)


def ito_check(T: float = 1.0, h: float = 1e-2, paths: int = 1000, seed: int = 0) -> float:
    """Mean |sum W_k dW_k - (W_T^2/2 - T/2)| over paths for X = W."""
    res = euler_maruyama(lambda t, x: 0.0 * x, lambda t, x: 1.0, 0.0, T, h, seed, paths, ito=True)
    exact = 0.5 * res.W_T ** 2 - 0.5 * T
    return float(np.mean(np.abs(res.ito - exact)))
