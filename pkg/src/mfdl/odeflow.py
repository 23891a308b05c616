"""Fixed-step ODE solvers, the Neural-ODE adjoint gradient, log-density tracing
and the probability-density-control objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .errors import DivergenceError, PreconditionError
from .optim.stochastic import init_state, stochastic_step
from .trace import Trace

METHODS = ("euler", "midpoint", "rk4")
ORDERS = {"euler": 1, "midpoint": 2, "rk4": 4}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    h: float = 0.01
    T: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.h > 0 and self.T > 0):
            raise ValueError("h and T must be positive")

    def grid(self, t0: float = 0.0) -> np.ndarray:
        """t0, t0 + h, ..., t0 + T; a shorter last step pads a non-integral T/h."""
        n = int(math.floor(self.T / self.h + 1e-9))
        ts = t0 + self.h * np.arange(n + 1)
        if self.T - n * self.h > 1e-12 * self.T:
            ts = np.append(ts, t0 + self.T)
        ts[-1] = t0 + self.T
        return ts


@dataclass
class OdeSystem:
    """x' = f(t, x, theta).

    ``vjp(t, x, theta, u)`` returns ``(u df/dx, u df/dt, u df/dtheta)`` and
    ``div(t, x, theta)`` the exact divergence of f in x.
    """

    f: Callable
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vjp: Optional[Callable] = None
    div: Optional[Callable] = None

    def __call__(self, t, x):
        return self.f(t, x, self.theta)


def _step(method, F, t, y, h):
    if method == "euler":
        return y + h * F(t, y)
    if method == "midpoint":
        return y + h * F(t + h / 2, y + h / 2 * F(t, y))
    k1 = F(t, y)
    k2 = F(t + h / 2, y + h / 2 * k1)
    k3 = F(t + h / 2, y + h / 2 * k2)
    k4 = F(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray     # (len(times), n)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def interp(self, t: float) -> np.ndarray:
        """Piecewise-linear interpolation of the stored states."""
        ts = self.times
        if ts[0] > ts[-1]:
            ts, states = ts[::-1], self.states[::-1]
        else:
            states = self.states
        i = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - w) * states[i] + w * states[i + 1]


def integrate(F, y0, times, method: str = "rk4") -> Trajectory:
    """Fixed-step integration of y' = F(t, y) over ``times`` (increasing or decreasing)."""
    y = np.array(y0, dtype=float)
    out = [y]
    for t, t2 in zip(times[:-1], times[1:]):
        y = _step(method, F, t, y, t2 - t)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"state blew up at t={t2:g}", last=Trajectory(np.asarray(times[:len(out)]), np.array(out)))
        out.append(y)
    return Trajectory(np.asarray(times, dtype=float), np.array(out))


def ode_solve(sys: OdeSystem, x0, cfg: SolverConfig = SolverConfig(), t0: float = 0.0) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise PreconditionError("x0 must be finite")
    return integrate(sys, x0, cfg.grid(t0), cfg.method)


@dataclass
class Costate:
    p_x: np.ndarray
    p_tau: float
    p_sigma: np.ndarray


@dataclass
class NodeGrad:
    J: float
    grad: np.ndarray
    costate: Costate
    trajectory: Trajectory


def node_grad(sys: OdeSystem, x0, g, grad_g, cfg: SolverConfig = SolverConfig(), t0: float = 0.0) -> NodeGrad:
    """J = g(x(T)) and its theta-gradient p_sigma(0) from the adjoint equations.

    The costate (p_x, p_tau, p_sigma) starts at (grad g(x(T)), 0, 0) and is
    integrated backward with p_x' = -p_x f_x, p_tau' = -p_x f_t and
    p_sigma' = -p_x f_theta, reading x(t) from the stored forward trajectory.
    """
    if sys.vjp is None:
        raise PreconditionError("node_grad needs the system's vjp")
    traj = ode_solve(sys, x0, cfg, t0)
    xT = traj.final
    d, n = xT.size, np.size(sys.theta)
    J = float(g(xT))

    def costate_rhs(t, p):
        gx, gt, gth = sys.vjp(t, traj.interp(t), sys.theta, p[:d])
        return -np.concatenate([np.atleast_1d(gx), [float(gt)], np.atleast_1d(gth)])

    pT = np.concatenate([np.asarray(grad_g(xT), dtype=float).reshape(d), [0.0], np.zeros(n)])
    back = integrate(costate_rhs, pT, traj.times[::-1], cfg.method)
    p0 = back.final
    return NodeGrad(J, p0[d + 1:], Costate(p0[:d], float(p0[d]), p0[d + 1:]), traj)


# --- systems ---------------------------------------------------------------

def constant_drift(d: int = 1) -> OdeSystem:
    """f(t, x) = theta."""
    return OdeSystem(
        f=lambda t, x, th: np.broadcast_to(th, np.shape(x)).astype(float),
        theta=np.zeros(d),
        vjp=lambda t, x, th, u: (np.zeros_like(u), 0.0, np.asarray(u, dtype=float)),
        div=lambda t, x, th: 0.0,
    )


def linear_system(A) -> OdeSystem:
    """f(t, x) = A x (no parameters)."""
    A = np.asarray(A, dtype=float)
    return OdeSystem(
        f=lambda t, x, th: x @ A.T,
        vjp=lambda t, x, th, u: (u @ A, 0.0, np.zeros(0)),
        div=lambda t, x, th: float(np.trace(A)) * np.ones(np.shape(x)[:-1]) if np.ndim(x) > 1 else float(np.trace(A)),
    )


class MlpDrift:
    """Drift f_theta(t, x) given by an MLP; with ``time_input`` the network sees (t, x)."""

    def __init__(self, spec: nn.MlpSpec, time_input: bool = True):
        off = 1 if time_input else 0
        if spec.widths[0] != spec.widths[-1] + off:
            raise PreconditionError("MLP input width must be d (+1 for time) and output width d")
        if spec.wrapper.kind != "none":
            raise PreconditionError("drift networks use wrapper 'none'")
        self.spec, self.off = spec, off
        self.d = spec.widths[-1]

    def _inp(self, t, x):
        x = np.atleast_2d(x)
        if self.off:
            return np.hstack([np.full((x.shape[0], 1), float(t)), x])
        return x

    def f(self, t, x, theta):
        y = nn.mlp_forward(self.spec, theta, self._inp(t, x))
        return y[0] if np.ndim(x) == 1 else y

    def vjp(self, t, x, theta, u):
        gth, gin = nn.mlp_grad(self.spec, theta, self._inp(t, x), np.atleast_2d(u))
        gt = float(gin[:, 0].sum()) if self.off else 0.0
        gx = gin[:, self.off:]
        return (gx[0] if np.ndim(x) == 1 else gx), gt, gth

    def _probes(self, t, x, theta):
        inp = self._inp(t, x)
        for i in range(self.d):
            V = np.zeros(inp.shape[1])
            V[self.off + i] = 1.0
            yield i, nn.mlp_taylor(self.spec, theta, inp, V, order=1)

    def div(self, t, x, theta):
        """Exact divergence from d Jacobian-vector probes."""
        total = 0.0
        for i, (_, yd, _, _) in self._probes(t, x, theta):
            total = total + yd[:, i]
        return total[0] if np.ndim(x) == 1 else total

    def div_vjp(self, t, x, theta, c):
        """Gradients of sum_rows c_row * div f(t, x_row) w.r.t. x rows, t and theta."""
        X = np.atleast_2d(x)
        c = np.broadcast_to(np.asarray(c, dtype=float), (X.shape[0],))
        gth = np.zeros(self.spec.n_params)
        gin = np.zeros((X.shape[0], self.d + self.off))
        for i, (y, yd, _, cache) in self._probes(t, X, theta):
            gyd = np.zeros_like(yd)
            gyd[:, i] = c
            a, b = nn.mlp_taylor_backward(cache, None, gyd)
            gth += a
            gin += b
        gt = float(gin[:, 0].sum()) if self.off else 0.0
        return gin[:, self.off:], gt, gth

    def system(self, theta) -> OdeSystem:
        return OdeSystem(self.f, np.asarray(theta, dtype=float), self.vjp, self.div)


# --- log density -------------------------------------------------------------

def logdensity_trace(sys: OdeSystem, x0, logp0: float, cfg: SolverConfig = SolverConfig(), t0: float = 0.0):
    """Integrate (x, log rho) jointly with d/dt log rho = -div f; returns (x(T), log rho(T))."""
    if sys.div is None:
        raise PreconditionError("logdensity_trace needs the system's divergence")
    x0 = np.asarray(x0, dtype=float)
    d = x0.size

    def F(t, y):
        x = y[:d]
        return np.concatenate([sys(t, x), [-float(sys.div(t, x, sys.theta))]])

    traj = integrate(F, np.concatenate([x0, [float(logp0)]]), cfg.grid(t0), cfg.method)
    return traj.final[:d], float(traj.final[d])


# --- probability density control -------------------------------------------

@dataclass
class DensityResult:
    loss: float
    h_T: float
    x_T: np.ndarray
    grad: Optional[np.ndarray] = None


def density_control_loss(drift: MlpDrift, theta, X, cfg: SolverConfig = SolverConfig(), return_grad: bool = False) -> DensityResult:
    """h_T + (1 / 2M) sum_i |x_T^(i)|^2 with h' = -(1/M) sum_i div f(t, x_i), h_0 = 0.

    All particles and h are one joint state so the adjoint gives the exact
    gradient of the discretized objective's continuous counterpart.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M, d = X.shape
    if d != drift.d:
        raise PreconditionError("sample dimension does not match the drift")
    theta = np.asarray(theta, dtype=float)

    def f(t, z, th):
        xs = z[:-1].reshape(M, d)
        dx = drift.f(t, xs, th)
        dh = -np.sum(drift.div(t, xs, th)) / M
        return np.concatenate([dx.reshape(-1), [dh]])

    def vjp(t, z, th, u):
        xs = z[:-1].reshape(M, d)
        gx, gt, gth = drift.vjp(t, xs, th, u[:-1].reshape(M, d))
        hx, ht, hth = drift.div_vjp(t, xs, th, -u[-1] / M)
        return np.concatenate([(gx + hx).reshape(-1), [0.0]]), gt + ht, gth + hth

    sys = OdeSystem(f, theta, vjp)
    z0 = np.concatenate([X.reshape(-1), [0.0]])
    g = lambda z: z[-1] + 0.5 / M * float(z[:-1] @ z[:-1])
    grad_g = lambda z: np.concatenate([z[:-1] / M, [1.0]])
    if return_grad:
        res = node_grad(sys, z0, g, grad_g, cfg)
        zT, J, grad = res.trajectory.final, res.J, res.grad
    else:
        zT = ode_solve(sys, z0, cfg).final
        J, grad = g(zT), None
    return DensityResult(float(J), float(zT[-1]), zT[:-1].reshape(M, d), grad)


def train_density_control(drift: MlpDrift, theta0, X, steps: int, alpha: float = 1e-2,
                          cfg: SolverConfig = SolverConfig(h=0.05)):
    """Adam on the density-control loss; returns (theta, trace)."""
    theta = np.array(theta0, dtype=float)
    state = init_state("adam", theta.size, alpha=alpha)
    trace = Trace()
    for k in range(steps):
        res = density_control_loss(drift, theta, X, cfg, return_grad=True)
        trace.log(k, res.loss, float(np.linalg.norm(res.grad)), alpha)
        theta, state = stochastic_step(state, theta, res.grad)
    res = density_control_loss(drift, theta, X, cfg)
    trace.log(steps, res.loss, float("nan"), 0.0)
    return theta, trace
