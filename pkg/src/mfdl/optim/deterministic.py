"""Line-search descent, CG, Newton-CG, BFGS and constrained schemes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import DivergenceError, IndefiniteError, NumericError, PreconditionError, StagnationError
from ..objectives import ObjectiveHandle
from ..trace import Trace

MAX_BACKTRACKS = 80


@dataclass(frozen=True)
class LineSearchConfig:
    alpha_bar: float = 1.0
    rho: float = 0.5
    c: float = 1e-4
    eps_tol: float = 1e-6
    max_iter: int = 1000

    def __post_init__(self):
        if not self.alpha_bar > 0:
            raise ValueError("alpha_bar must be positive")
        if not (0 < self.rho < 1 and 0 < self.c < 1):
            raise ValueError("rho and c must lie in (0, 1)")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")

    def replace(self, **kw) -> "LineSearchConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return LineSearchConfig(**d)


def line_search_bound(cfg: LineSearchConfig, L: float) -> int:
    """Largest number of step reductions backtracking can need when grad f is L-Lipschitz."""
    return max(0, math.ceil(math.log(2 * (1 - cfg.c) / (cfg.alpha_bar * L)) / math.log(cfg.rho)))


def _finite(x, f, g):
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericError("non-finite objective or gradient", last=x)


def _backtrack(fun, x, f, slope, v, cfg):
    """Armijo backtracking: f(x + a v) <= f + c a slope with slope = grad . v < 0.

    Returns (alpha, f_new, reductions) or None when the search gives up.
    """
    alpha = cfg.alpha_bar
    for count in range(MAX_BACKTRACKS + 1):
        f_new = fun(x + alpha * v)
        if math.isfinite(f_new) and f_new <= f + cfg.c * alpha * slope:
            return alpha, f_new, count
        alpha *= cfg.rho
    return None


def gd_backtracking(obj: ObjectiveHandle, x0, cfg: LineSearchConfig = LineSearchConfig()):
    """Steepest descent with Armijo backtracking; returns ``(x, trace)``.

    Each trace row holds f and |grad f| at the iterate the step starts from,
    the accepted step and the number of step reductions.
    """
    x = np.array(x0, dtype=float)
    trace = Trace()
    f, g = obj.value(x), obj.grad(x)
    _finite(x, f, g)
    for k in range(cfg.max_iter):
        gn = float(np.linalg.norm(g))
        if gn < cfg.eps_tol:
            break
        res = _backtrack(obj.value, x, f, -gn * gn, -g, cfg)
        if res is None:
            trace.notes["status"] = "line_search_failed"
            break
        alpha, f_new, count = res
        trace.log(k, f, gn, alpha, count)
        x = x - alpha * g
        f, g = f_new, obj.grad(x)
        _finite(x, f, g)
    trace.notes.setdefault("status", "ok" if np.linalg.norm(g) < cfg.eps_tol else "max_iter")
    trace.notes["final_grad_norm"] = float(np.linalg.norm(g))
    return x, trace


def cg_solve(Q, b, tol=1e-10, max_iter=None, x0=None, return_info=False):
    """Conjugate gradients for Q x = b with Q symmetric positive definite.

    ``Q`` is a matrix or a callable returning Q @ d.  Stops when
    |Q x - b| <= tol |b| or after ``max_iter`` (default n) iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    matvec = Q if callable(Q) else (lambda d, _Q=np.asarray(Q, dtype=float): _Q @ d)
    max_iter = n if max_iter is None else max_iter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    g = matvec(x) - b
    d = -g
    bnorm = float(np.linalg.norm(b))
    residuals = [float(np.linalg.norm(g))]
    it = 0
    while residuals[-1] > tol * bnorm and it < max_iter:
        Qd = matvec(d)
        curv = float(d @ Qd)
        if curv <= 0:
            err = IndefiniteError(f"non-positive curvature d.Qd = {curv:.3e} at CG iteration {it}", last=x)
            err.iterations = it
            raise err
        alpha = -float(g @ d) / curv
        x = x + alpha * d
        g = g + alpha * Qd
        beta = float(g @ Qd) / curv
        d = -g + beta * d
        it += 1
        residuals.append(float(np.linalg.norm(g)))
    if return_info:
        return x, {"iterations": it, "residuals": residuals}
    return x


def _truncated_cg(hvp, g, forcing, k_cg):
    """Approximately solve H s = -g; returns (s, negative_curvature_flag)."""
    s = np.zeros_like(g)
    r = g.copy()           # H s + g
    d = -r
    gnorm = np.linalg.norm(g)
    for _ in range(k_cg):
        if np.linalg.norm(r) <= forcing * gnorm:
            break
        Hd = hvp(d)
        curv = float(d @ Hd)
        if curv <= 0:
            return s, True
        alpha = -float(r @ d) / curv
        s = s + alpha * d
        r = r + alpha * Hd
        d = -r + float(r @ Hd) / curv * d
    return s, False


def newton_cg(obj: ObjectiveHandle, x0, cfg: LineSearchConfig = LineSearchConfig(), cg_forcing=1e-10,
              k_cg=None, hvp: Optional[Callable] = None, grad: Optional[Callable] = None):
    """Hessian-free Newton-CG with Armijo backtracking; returns ``(x, trace)``.

    ``hvp``/``grad`` override the objective's callbacks, e.g. with subsampled
    estimates; otherwise the method is deterministic Newton-CG.  On negative
    curvature the iteration falls back to steepest descent.
    """
    hvp = hvp or obj.hvp
    grad = grad or obj.grad
    if hvp is None:
        raise PreconditionError("newton_cg needs a Hessian-vector product")
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    k_cg = n if k_cg is None else k_cg
    trace = Trace()
    trace.notes["fallbacks"] = 0
    f, g = obj.value(x), grad(x)
    _finite(x, f, g)
    for k in range(cfg.max_iter):
        gn = float(np.linalg.norm(g))
        if gn < cfg.eps_tol:
            break
        s, negative = _truncated_cg(lambda d: hvp(x, d), g, cg_forcing, k_cg)
        slope = float(g @ s)
        if negative or not slope < 0:
            s, slope = -g, -gn * gn
            trace.notes["fallbacks"] += 1
        res = _backtrack(obj.value, x, f, slope, s, cfg)
        if res is None:
            trace.notes["status"] = "line_search_failed"
            break
        alpha, f_new, count = res
        trace.log(k, f, gn, alpha, count)
        x = x + alpha * s
        f, g = f_new, grad(x)
        _finite(x, f, g)
    trace.notes.setdefault("status", "ok" if np.linalg.norm(g) < cfg.eps_tol else "max_iter")
    trace.notes["final_grad_norm"] = float(np.linalg.norm(g))
    return x, trace


def bfgs_update(H, s, y):
    """Inverse-Hessian update obtained from the BFGS B-update via Sherman-Morrison-Woodbury."""
    ys = float(y @ s)
    Hy = H @ y
    yHy = float(y @ Hy)
    H = H + (1 + yHy / ys) * np.outer(s, s) / ys - (np.outer(Hy, s) + np.outer(s, Hy)) / ys
    return 0.5 * (H + H.T)


def bfgs(obj: ObjectiveHandle, x0, cfg: LineSearchConfig = LineSearchConfig(), H0=None,
         step_rule: Optional[Callable] = None, callback: Optional[Callable] = None, return_inverse=False):
    """Quasi-Newton descent keeping H_k ~ (Hessian)^{-1}; returns ``(x, trace)``.

    ``step_rule(x, v)`` replaces backtracking with a caller-supplied step
    (e.g. the exact step on a quadratic).  ``callback(k, x, H)`` sees every
    inverse-Hessian estimate.  The update is skipped when y.s <= 1e-10.
    The Wolfe curvature condition is recorded in ``trace.notes`` but not
    enforced.
    """
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    H = np.eye(n) if H0 is None else np.array(H0, dtype=float)
    trace = Trace()
    trace.notes.update(skipped=0, wolfe_curvature_failures=0)
    f, g = obj.value(x), obj.grad(x)
    _finite(x, f, g)
    for k in range(cfg.max_iter):
        gn = float(np.linalg.norm(g))
        if gn < cfg.eps_tol:
            break
        v = -H @ g
        slope = float(g @ v)
        if not slope < 0:
            H = np.eye(n)
            v, slope = -g, -gn * gn
        if step_rule is None:
            res = _backtrack(obj.value, x, f, slope, v, cfg)
            if res is None:
                trace.notes["status"] = "line_search_failed"
                break
            alpha, f_new, count = res
        else:
            alpha, count = float(step_rule(x, v)), 0
            f_new = obj.value(x + alpha * v)
        trace.log(k, f, gn, alpha, count)
        x_new = x + alpha * v
        g_new = obj.grad(x_new)
        _finite(x_new, f_new, g_new)
        s, y = x_new - x, g_new - g
        if float(g_new @ v) < 0.9 * slope:
            trace.notes["wolfe_curvature_failures"] += 1
        if float(y @ s) > 1e-10:
            H = bfgs_update(H, s, y)
        else:
            trace.notes["skipped"] += 1
        x, f, g = x_new, f_new, g_new
        if callback is not None:
            callback(k, x, H)
    trace.notes.setdefault("status", "ok" if np.linalg.norm(g) < cfg.eps_tol else "max_iter")
    trace.notes["final_grad_norm"] = float(np.linalg.norm(g))
    if return_inverse:
        return x, trace, H
    return x, trace


@dataclass(frozen=True)
class VectorFunction:
    """Constraint map c: R^n -> R^m with Jacobian (m x n)."""

    value: Callable
    jac: Callable

    def __call__(self, x):
        return np.atleast_1d(np.asarray(self.value(x), dtype=float))

    def jacobian(self, x):
        return np.atleast_2d(np.asarray(self.jac(x), dtype=float))


@dataclass(frozen=True)
class PenaltySchedule:
    gamma0: float = 1.0
    eps0: float = 1e-1
    gamma_factor: float = 0.2
    eps_factor: float = 0.5
    gamma_min: float = 1e-9
    eps_min: float = 1e-10
    gamma_tol: float = 1e-6
    feas_tol: float = 1e-6
    grad_tol: float = 1e-3
    max_outer: int = 40

    def __post_init__(self):
        if not (self.gamma0 > 0 and self.eps0 > 0):
            raise ValueError("gamma0 and eps0 must be positive")
        if not (0 < self.gamma_factor < 1 and 0 < self.eps_factor < 1):
            raise ValueError("schedule factors must lie in (0, 1)")


@dataclass
class PenaltyState:
    gamma: float
    eps: float
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        if not (self.gamma > 0 and self.eps > 0):
            raise ValueError("gamma and eps must be positive")
        if np.any(np.asarray(self.mu) < 0):
            raise ValueError("inequality multipliers must be nonnegative")


def _inner(method, obj, x, eps, inner_cfg):
    cfg = inner_cfg.replace(eps_tol=eps)
    solver = {"bfgs": bfgs, "gd": gd_backtracking}[method]
    x_new, tr = solver(obj, x, cfg)
    gn = tr.notes["final_grad_norm"]
    if gn > eps and tr.notes["status"] == "line_search_failed" and np.allclose(x_new, x):
        raise StagnationError(f"inner {method} stalled with |grad| = {gn:.3e} > {eps:.3e}", last=x_new)
    return x_new, tr


def _empty(m):
    return np.zeros(m)


def quadratic_penalty(f: ObjectiveHandle, h: Optional[VectorFunction], x0, schedule=PenaltySchedule(),
                      inner_cfg=LineSearchConfig(max_iter=5000), inner="bfgs"):
    """Minimize f + |h|^2 / (2 gamma) for a shrinking gamma.

    Returns ``(x, lambda_hat, trace)`` with lambda_hat = h(x) / gamma; one
    trace row per outer iteration (f, |grad Q|, gamma, inner iterations).
    """
    x = np.array(x0, dtype=float)
    gamma, eps = schedule.gamma0, schedule.eps0
    trace = Trace()
    lam = _empty(0) if h is None else np.zeros(len(h(x)))
    for k in range(schedule.max_outer):
        Q = _penalty_objective(f, h, None, gamma, None, None)
        x, tr = _inner(inner, Q, x, eps, inner_cfg)
        hx = _empty(0) if h is None else h(x)
        lam = hx / gamma
        gq = float(np.linalg.norm(Q.grad(x)))
        trace.log(k, f.value(x), gq, gamma, len(tr))
        if h is None or (gamma <= schedule.gamma_tol and np.linalg.norm(hx) <= schedule.feas_tol
                         and gq <= schedule.grad_tol):
            break
        if h is not None and gamma <= schedule.gamma_min:
            break
        gamma = max(gamma * schedule.gamma_factor, schedule.gamma_min)
        eps = max(eps * schedule.eps_factor, schedule.eps_min)
    trace.notes["gamma"] = gamma
    return x, lam, trace


def _penalty_objective(f, h, g, gamma, lam, mu):
    """Augmented Lagrangian (plain quadratic penalty when lam, mu are None)."""

    def parts(x):
        fx, gf = f.value(x), np.asarray(f.grad(x), dtype=float)
        val, grad = fx, gf.copy()
        if h is not None:
            hx, J = h(x), h.jacobian(x)
            w = hx / gamma if lam is None else lam + hx / gamma
            val += (0.0 if lam is None else float(lam @ hx)) + float(hx @ hx) / (2 * gamma)
            grad += J.T @ w
        if g is not None:
            gx, Jg = g(x), g.jacobian(x)
            gp = np.maximum(gx, -gamma * mu)
            val += float(mu @ gp) + float(gp @ gp) / (2 * gamma)
            grad += Jg.T @ np.maximum(mu + gx / gamma, 0.0)
        return val, grad

    return ObjectiveHandle(0, lambda x: parts(x)[0], lambda x: parts(x)[1])


ALM_SCHEDULE = PenaltySchedule(gamma_min=1e-3, eps_min=1e-7, feas_tol=1e-8, grad_tol=1e-6)


def augmented_lagrangian(f: ObjectiveHandle, h: Optional[VectorFunction], g: Optional[VectorFunction], x0,
                         schedule=ALM_SCHEDULE, inner_cfg=LineSearchConfig(max_iter=5000), inner="bfgs",
                         lam0=None, mu0=None):
    """Augmented Lagrangian with squared-slack handling of g(x) <= 0.

    Multipliers: lambda += h(x)/gamma, mu = max(mu + g(x)/gamma, 0).  Unlike
    the pure penalty, gamma need not vanish, so the default schedule floors
    it at 1e-3 while the inner tolerance keeps shrinking.  Stops when
    feasibility and complementarity are below ``feas_tol`` and the Lagrangian
    gradient is below ``grad_tol``.  Returns ``(x, lambda, mu, trace)``.
    """
    x = np.array(x0, dtype=float)
    m_h = 0 if h is None else len(h(x))
    m_g = 0 if g is None else len(g(x))
    lam = np.zeros(m_h) if lam0 is None else np.array(lam0, dtype=float)
    mu = np.zeros(m_g) if mu0 is None else np.array(mu0, dtype=float)
    state = PenaltyState(schedule.gamma0, schedule.eps0, lam, mu)
    trace = Trace()
    for k in range(schedule.max_outer):
        LA = _penalty_objective(f, h, g, state.gamma, state.lam, state.mu)
        x, tr = _inner(inner, LA, x, state.eps, inner_cfg)
        hx = h(x) if h is not None else _empty(0)
        gx = g(x) if g is not None else _empty(0)
        stationarity = float(np.linalg.norm(LA.grad(x)))
        trace.log(k, f.value(x), stationarity, state.gamma, len(tr))
        state.lam = state.lam + hx / state.gamma
        state.mu = np.maximum(state.mu + gx / state.gamma, 0.0)
        feas = max([0.0] + list(np.abs(hx)) + list(np.maximum(gx, 0.0)))
        comp = float(np.max(np.abs(state.mu * gx))) if m_g else 0.0
        if max(feas, comp) <= schedule.feas_tol and stationarity <= schedule.grad_tol:
            break
        state.gamma = max(state.gamma * schedule.gamma_factor, schedule.gamma_min)
        state.eps = max(state.eps * schedule.eps_factor, schedule.eps_min)
    trace.notes["gamma"] = state.gamma
    return x, state.lam, state.mu, trace


def lagrangian_first_order(f: ObjectiveHandle, h: Optional[VectorFunction], x0, alpha=0.1, beta=0.1,
                           max_iter=10000, tol=1e-10, lam0=None):
    """Simultaneous descent in x and ascent in lambda on f + lambda . h.

    Returns ``(x, lambda, trace)``.
    """
    x = np.array(x0, dtype=float)
    m = 0 if h is None else len(h(x))
    lam = np.zeros(m) if lam0 is None else np.array(lam0, dtype=float)
    trace = Trace()
    for k in range(max_iter):
        gl = np.asarray(f.grad(x), dtype=float)
        hx = _empty(0)
        if h is not None:
            hx = h(x)
            gl = gl + h.jacobian(x).T @ lam
        res = float(np.sqrt(gl @ gl + hx @ hx))
        trace.log(k, f.value(x), res, alpha, 0)
        if res < tol:
            break
        x = x - alpha * gl
        lam = lam + beta * hx
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > 1e8:
            raise DivergenceError("Lagrangian iteration diverged", last=x)
    return x, lam, trace
