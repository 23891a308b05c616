"""Desk-scale generative models: diffusion with OU / VP schedules, flow matching
and the VAE evidence lower bound.

Networks are :mod:`mfdl.nn` MLPs taking ``(x, t)`` concatenated as input
(time last).  Losses return ``(loss, grad)`` with analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nn
from .errors import DivergenceError, DomainError, PreconditionError, ShapeError
from .optim.stochastic import init_state, stochastic_step
from .rng import make_rng
from .trace import Trace

T_MIN = 1e-3
SIGMA_FLOOR = 1e-3
XI_KNOTS = 1024


@dataclass(frozen=True)
class Schedule:
    """Forward noising dX = -c_t X dt + sqrt(2 c_t) dW with c_t = a (OU) or gamma_t (VP)."""

    kind: str = "ou"
    a: float = 1.0
    gamma_min: float = 0.01
    gamma_max: float = 20.0
    T: float = 5.0

    def __post_init__(self):
        if self.kind not in ("ou", "vp"):
            raise ValueError("schedule kind must be 'ou' or 'vp'")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.kind == "ou" and not self.a > 0:
            raise ValueError("a must be positive")
        if self.kind == "vp" and not 0 < self.gamma_min <= self.gamma_max:
            raise ValueError("need 0 < gamma_min <= gamma_max")

    @classmethod
    def ou(cls, a: float = 1.0, T: float = 5.0) -> "Schedule":
        return cls("ou", a=a, T=T)

    @classmethod
    def vp(cls, gamma_min: float = 0.01, gamma_max: float = 20.0, T: float = 1.0) -> "Schedule":
        return cls("vp", gamma_min=gamma_min, gamma_max=gamma_max, T=T)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-12)):
            raise DomainError(f"t must lie in [0, {self.T}]")
        return t

    def rate(self, t):
        """c_t: a for OU, gamma_min + (t / T)(gamma_max - gamma_min) for VP."""
        t = self._check(t)
        if self.kind == "ou":
            return np.full(t.shape, self.a) if t.ndim else self.a
        return self.gamma_min + t / self.T * (self.gamma_max - self.gamma_min)

    def integrated_rate(self, t):
        t = self._check(t)
        if self.kind == "ou":
            return self.a * t
        return t * self.gamma_min + t * t / (2 * self.T) * (self.gamma_max - self.gamma_min)

    def __call__(self, t):
        """(alpha_t, beta_t) with alpha_t = exp(-int c), beta_t^2 = 1 - alpha_t^2."""
        A = self.integrated_rate(t)
        alpha = np.exp(-A)
        beta = np.sqrt(-np.expm1(-2 * A))
        return alpha, beta


def schedule_eval(sched: Schedule, t):
    return sched(t)


def sample_times(sched: Schedule, n: int, rng, t_min: float = T_MIN) -> np.ndarray:
    """Draw t on (t_min, T] with density proportional to beta_t^2 (inverse CDF on a knot table)."""
    knots = np.linspace(t_min, sched.T, XI_KNOTS)
    w = sched(knots)[1] ** 2
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(knots))])
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, knots)


@dataclass
class GenBatch:
    x0: np.ndarray
    eps: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=float))
        self.eps = np.atleast_2d(np.asarray(self.eps, dtype=float))
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        if self.x0.shape != self.eps.shape or self.t.shape != (self.x0.shape[0],):
            raise ShapeError("x0 and eps must be M x d and t of length M")
        if not all(np.all(np.isfinite(a)) for a in (self.x0, self.eps, self.t)):
            raise PreconditionError("batch must be finite")


def diffusion_batch(data, sched: Schedule, M: int, rng) -> GenBatch:
    data = np.atleast_2d(data)
    idx = rng.integers(data.shape[0], size=M)
    return GenBatch(data[idx], rng.standard_normal((M, data.shape[1])), sample_times(sched, M, rng))


def _net_input(x, t):
    x = np.atleast_2d(x)
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (x.shape[0],))
    return np.hstack([x, t[:, None]])


def mlp_field(spec: nn.MlpSpec, theta) -> Callable:
    """(x, t) -> network output for a batch x and scalar or per-row t."""
    return lambda x, t: nn.mlp_forward(spec, theta, _net_input(x, t))


def _check_net(spec, d):
    if spec.widths[0] != d + 1 or spec.widths[-1] != d:
        raise ShapeError(f"network must map d+1={d + 1} inputs to d={d} outputs")


def _regression(spec, theta, inp, target):
    """Mean over rows of |net(inp) - target|^2 and its theta-gradient."""
    pred, cache = nn.mlp_forward(spec, theta, inp, return_cache=True)
    r = pred - target
    M = inp.shape[0]
    loss = float(np.sum(r * r) / M)
    g, _ = nn.mlp_grad(spec, theta, inp, 2 * r / M, cache)
    return loss, g


def denoise_loss(spec: nn.MlpSpec, theta, sched: Schedule, batch: GenBatch, t_min: float = T_MIN):
    """(1/M) sum |eps_net(alpha_t x0 + beta_t eps, t) - eps|^2 and its gradient."""
    _check_net(spec, batch.x0.shape[1])
    if np.any(batch.t < t_min):
        raise PreconditionError(f"times must be >= t_min={t_min}")
    alpha, beta = sched(batch.t)
    xt = alpha[:, None] * batch.x0 + beta[:, None] * batch.eps
    return _regression(spec, theta, _net_input(xt, batch.t), batch.eps)


def score_from_eps(eps_field: Callable, sched: Schedule) -> Callable:
    """s_t(x) = -eps_t(x) / beta_t."""
    return lambda x, t: -eps_field(x, t) / sched(t)[1]


def fm_loss(spec: nn.MlpSpec, theta, z, eps, t):
    """(1/M) sum |u(t z + (1 - t) eps, t) - (z - eps)|^2 and its gradient."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    _check_net(spec, z.shape[1])
    x = t[:, None] * z + (1 - t[:, None]) * eps
    return _regression(spec, theta, _net_input(x, t), fm_target(z, eps))


def fm_target(z, eps):
    return np.asarray(z, dtype=float) - np.asarray(eps, dtype=float)


def _rk4(F, y, t, h):
    k1 = F(y, t)
    k2 = F(y + h / 2 * k1, t + h / 2)
    k3 = F(y + h / 2 * k2, t + h / 2)
    k4 = F(y + h * k3, t + h)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _finite(z, what):
    if not np.all(np.isfinite(z)):
        raise DivergenceError(f"{what} sampler blew up", last=z)


def diffusion_sample(score: Callable, sched: Schedule, mode: str, n_samples: int, steps: int, seed: int = 0,
                     d: int = 1, t_min: float = T_MIN) -> np.ndarray:
    """Reverse-time generation from Z_0 ~ N(0, I_d) over tau in [0, T - t_min].

    em:     Z += (c Z + 2 c s_{T-tau}(Z)) h + sqrt(2 c h) zeta
    pf_ode: z' = c z + c s_{T-tau}(z), integrated with rk4
    where c = c_{T-tau} is the forward rate.
    """
    if mode not in ("em", "pf_ode"):
        raise ValueError("mode must be 'em' or 'pf_ode'")
    if steps < 0 or n_samples < 1:
        raise ValueError("need steps >= 0 and n_samples >= 1")
    rng = make_rng(seed, "diffusion", 0 if mode == "em" else 1)
    z = rng.standard_normal((n_samples, d))
    if steps == 0:
        return z
    h = (sched.T - t_min) / steps
    fwd = lambda tau: max(sched.T - tau, t_min)
    for k in range(steps):
        tau = k * h
        if mode == "em":
            t = fwd(tau)
            c = float(sched.rate(t))
            z = z + (c * z + 2 * c * score(z, t)) * h + math.sqrt(2 * c * h) * rng.standard_normal(z.shape)
        else:
            def F(y, s):
                t = fwd(s)
                c = float(sched.rate(t))
                return c * y + c * score(y, t)
            z = _rk4(F, z, tau, h)
        _finite(z, mode)
    return z


def fm_sample(field_fn: Callable, n_samples: int, steps: int, seed: int = 0, d: int = 1, t_min: float = T_MIN) -> np.ndarray:
    """Integrate x' = u_t(x) from N(0, I) at t=0 to t = 1 - t_min with rk4."""
    if steps < 0 or n_samples < 1:
        raise ValueError("need steps >= 0 and n_samples >= 1")
    rng = make_rng(seed, "flow_matching")
    x = rng.standard_normal((n_samples, d))
    if steps == 0:
        return x
    h = (1 - t_min) / steps
    for k in range(steps):
        x = _rk4(field_fn, x, k * h, h)
        _finite(x, "flow-matching")
    return x


def _train(loss_fn, theta0, steps, alpha, seed):
    """Adam with the step size decayed linearly from alpha to alpha / 10."""
    theta = np.array(theta0, dtype=float)
    state = init_state("adam", theta.size, alpha=alpha)
    rng = make_rng(seed, "train")
    trace = Trace()
    for k in range(steps):
        a_k = alpha * (1 - 0.9 * k / max(steps - 1, 1))
        loss, g = loss_fn(theta, rng)
        trace.log(k, loss, float(np.linalg.norm(g)), a_k)
        theta, state = stochastic_step(state, theta, g, alpha=a_k)
    return theta, trace


def default_net(d: int, hidden: int = 32, depth: int = 2) -> nn.MlpSpec:
    return nn.MlpSpec((d + 1,) + (hidden,) * depth + (d,), nn.Activation("tanh"))


def train_denoiser(data, sched: Schedule, steps: int, spec: Optional[nn.MlpSpec] = None, batch: int = 128,
                   alpha: float = 1e-2, seed: int = 0):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    spec = spec or default_net(data.shape[1])
    loss = lambda th, rng: denoise_loss(spec, th, sched, diffusion_batch(data, sched, batch, rng))
    theta, trace = _train(loss, nn.mlp_init(spec, seed), steps, alpha, seed)
    return spec, theta, trace


def train_flow_matching(data, steps: int, spec: Optional[nn.MlpSpec] = None, batch: int = 128,
                        alpha: float = 1e-2, seed: int = 0):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    spec = spec or default_net(data.shape[1])

    def loss(th, rng):
        z = data[rng.integers(data.shape[0], size=batch)]
        return fm_loss(spec, th, z, rng.standard_normal(z.shape), rng.random(batch))

    theta, trace = _train(loss, nn.mlp_init(spec, seed), steps, alpha, seed)
    return spec, theta, trace


# --- VAE -------------------------------------------------------------------

def _softplus(r):
    return np.logaddexp(0.0, r)


def _sigmoid(r):
    return 0.5 * (1 + np.tanh(0.5 * r))


@dataclass(frozen=True)
class VaeNets:
    """Encoder d -> (mu in R^m, raw sigma); decoder m -> (mu in R^d, raw sigma).

    sigma = softplus(raw) + floor, a scalar per input.
    """

    encoder: nn.MlpSpec
    decoder: nn.MlpSpec
    floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if self.encoder.wrapper.kind != "none" or self.decoder.wrapper.kind != "none":
            raise PreconditionError("VAE networks use wrapper 'none'")
        if self.decoder.widths[0] != self.m or self.encoder.widths[0] != self.d:
            raise ShapeError("encoder must map d -> m+1 and decoder m -> d+1")

    @property
    def d(self) -> int:
        return self.decoder.widths[-1] - 1

    @property
    def m(self) -> int:
        return self.encoder.widths[-1] - 1

    @classmethod
    def build(cls, d: int, m: int, hidden=(16,), activation: str = "tanh") -> "VaeNets":
        act = nn.Activation(activation)
        return cls(nn.MlpSpec((d,) + tuple(hidden) + (m + 1,), act), nn.MlpSpec((m,) + tuple(hidden) + (d + 1,), act))


@dataclass
class VaeResult:
    loss: float                 # mean over the batch of B - A  (= -ELBO)
    grad_enc: np.ndarray
    grad_dec: np.ndarray
    A: np.ndarray               # per-sample reconstruction log-likelihood estimate
    B: np.ndarray               # per-sample closed-form KL term
    diagnostics: dict = field(default_factory=dict)


def vae_elbo(nets: VaeNets, theta_enc, theta_dec, x, seed: int = 0, eps=None) -> VaeResult:
    """Single-sample ELBO: A = log p(x | z) at z = mu + sigma eps, B = KL(q(.|x) || N(0, I))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, d, m = x.shape[0], nets.d, nets.m
    if x.shape[1] != d:
        raise ShapeError(f"x must have {d} columns")
    if eps is None:
        eps = make_rng(seed, "vae").standard_normal((N, m))
    eps = np.asarray(eps, dtype=float).reshape(N, m)

    enc, enc_cache = nn.mlp_forward(nets.encoder, theta_enc, x, return_cache=True)
    mu_q, r_q = enc[:, :m], enc[:, m]
    s_q = _softplus(r_q) + nets.floor
    z = mu_q + s_q[:, None] * eps

    dec, dec_cache = nn.mlp_forward(nets.decoder, theta_dec, z, return_cache=True)
    mu_p, r_p = dec[:, :d], dec[:, d]
    s_p = _softplus(r_p) + nets.floor
    res = x - mu_p
    sq = np.sum(res * res, axis=1)
    A = -sq / (2 * s_p ** 2) - 0.5 * d * np.log(2 * math.pi * s_p ** 2)
    B = 0.5 * (m * s_q ** 2 + np.sum(mu_q * mu_q, axis=1) - m - 2 * m * np.log(s_q))
    loss = float(np.mean(B - A))

    # backward of mean(B - A)
    g_mu_p = -res / s_p[:, None] ** 2
    g_s_p = -sq / s_p ** 3 + d / s_p
    up_dec = np.hstack([g_mu_p, (g_s_p * _sigmoid(r_p))[:, None]]) / N
    grad_dec, g_z = nn.mlp_grad(nets.decoder, theta_dec, z, up_dec, dec_cache)
    g_mu_q = g_z + mu_q / N
    g_s_q = np.sum(g_z * eps, axis=1) + (m * s_q - m / s_q) / N
    up_enc = np.hstack([g_mu_q, (g_s_q * _sigmoid(r_q))[:, None]])
    grad_enc, _ = nn.mlp_grad(nets.encoder, theta_enc, x, up_enc, enc_cache)

    diag = {
        "min_sigma_enc": float(s_q.min()),
        "min_sigma_dec": float(s_p.min()),
        "at_floor": int(np.sum(s_q < 2 * nets.floor) + np.sum(s_p < 2 * nets.floor)),
    }
    return VaeResult(loss, grad_enc, grad_dec, A, B, diag)


def linear_gaussian_evidence(W, b, sigma: float, x) -> np.ndarray:
    """log N(x; b, W W^T + sigma^2 I): the exact evidence of a linear decoder under a N(0, I) prior."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = W.shape[0]
    C = W @ W.T + sigma ** 2 * np.eye(d)
    L = np.linalg.cholesky(C)
    r = np.linalg.solve(L, (x - b).T)
    return -0.5 * np.sum(r * r, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * math.log(2 * math.pi)


def train_vae(data, steps: int, m: int = 1, hidden=(16,), alpha: float = 1e-2, batch: int = 128, seed: int = 0):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    nets = VaeNets.build(data.shape[1], m, hidden)
    ne = nets.encoder.n_params
    theta0 = np.concatenate([nn.mlp_init(nets.encoder, seed), nn.mlp_init(nets.decoder, seed + 1)])

    def loss(th, rng):
        xb = data[rng.integers(data.shape[0], size=batch)]
        r = vae_elbo(nets, th[:ne], th[ne:], xb, eps=rng.standard_normal((batch, m)))
        return r.loss, np.concatenate([r.grad_enc, r.grad_dec])

    theta, trace = _train(loss, theta0, steps, alpha, seed)
    return nets, theta[:ne], theta[ne:], trace


def vae_sample(nets: VaeNets, theta_dec, n_samples: int, seed: int = 0) -> np.ndarray:
    """Decoder means at z ~ N(0, I_m)."""
    z = make_rng(seed, "vae_sample").standard_normal((n_samples, nets.m))
    return nn.mlp_forward(nets.decoder, theta_dec, z)[:, :nets.d]
