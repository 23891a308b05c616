"""Finite MDPs: Bellman operators, exact and iterative planners, tabular learners.

Rewards are indexed ``r[s, a]`` and transitions ``P[s, a, s']``.  Argmax ties
always resolve to the lowest action index.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NumericError, ShapeError
from .rng import make_rng


@dataclass(frozen=True)
class Mdp:
    P: np.ndarray
    r: np.ndarray
    gamma: float
    terminal: tuple = ()

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ShapeError("P must be S x A x S and r must be S x A")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1)) > 1e-12:
            raise ValueError("each P[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "terminal", tuple(int(s) for s in self.terminal))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def to_json(self) -> str:
        d = {"n_states": self.n_states, "n_actions": self.n_actions, "gamma": self.gamma,
             "P": self.P.tolist(), "r": self.r.tolist()}
        if self.terminal:
            d["terminal"] = list(self.terminal)
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "Mdp":
        d = json.loads(text)
        mdp = cls(np.array(d["P"]), np.array(d["r"]), float(d["gamma"]), tuple(d.get("terminal", ())))
        if mdp.n_states != d["n_states"] or mdp.n_actions != d["n_actions"]:
            raise ShapeError("declared sizes disagree with P")
        return mdp


def random_mdp(S: int, A: int, gamma: float = 0.9, seed: int = 0) -> Mdp:
    """Dirichlet(1) transitions and uniform [0, 1) rewards."""
    rng = make_rng(seed, "random_mdp")
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    return Mdp(P, rng.random((S, A)), gamma)


GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))   # up, down, left, right


def gridworld(n: int = 4, gamma: float = 0.9) -> Mdp:
    """n x n grid, deterministic moves (walls bounce back), reward -1 per step,
    absorbing zero-reward goal in the bottom-right corner."""
    S = n * n
    goal = S - 1
    P = np.zeros((S, 4, S))
    r = -np.ones((S, 4))
    for s in range(S):
        i, j = divmod(s, n)
        for a, (di, dj) in enumerate(GRID_MOVES):
            if s == goal:
                P[s, a, s] = 1.0
                r[s, a] = 0.0
                continue
            ni, nj = i + di, j + dj
            if not (0 <= ni < n and 0 <= nj < n):
                ni, nj = i, j
            P[s, a, ni * n + nj] = 1.0
    return Mdp(P, r, gamma, terminal=(goal,))


def deterministic_policy(actions: Sequence[int], n_actions: int) -> np.ndarray:
    pi = np.zeros((len(actions), n_actions))
    pi[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
    return pi


def _check_policy(mdp, pi):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != mdp.r.shape:
        raise ShapeError("policy must be S x A")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1)) > 1e-12:
        raise ValueError("policy rows must be probability vectors")
    return pi


def _check_v(mdp, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ShapeError("value table must have length S")
    return v


def q_from_v(mdp: Mdp, v) -> np.ndarray:
    """q(s, a) = r(s, a) + gamma sum_s' P(s'|s, a) v(s')."""
    return mdp.r + mdp.gamma * mdp.P @ _check_v(mdp, v)


def bellman_backup_pi(mdp: Mdp, pi, v) -> np.ndarray:
    pi = _check_policy(mdp, pi)
    return np.sum(pi * q_from_v(mdp, v), axis=1)


def bellman_backup_opt(mdp: Mdp, v, return_argmax: bool = False):
    q = q_from_v(mdp, v)
    tv = q.max(axis=1)
    return (tv, q.argmax(axis=1)) if return_argmax else tv


def policy_model(mdp: Mdp, pi):
    """(P^pi, r^pi): state-to-state transitions and expected rewards under pi."""
    pi = _check_policy(mdp, pi)
    return np.einsum("sa,sat->st", pi, mdp.P), np.sum(pi * mdp.r, axis=1)


def policy_evaluate_exact(mdp: Mdp, pi) -> np.ndarray:
    """v^pi = (I - gamma P^pi)^{-1} r^pi."""
    Ppi, rpi = policy_model(mdp, pi)
    try:
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * Ppi, rpi)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for gamma < 1
        raise NumericError("policy evaluation system is singular") from exc


def greedy_policy(mdp: Mdp, v) -> np.ndarray:
    return deterministic_policy(q_from_v(mdp, v).argmax(axis=1), mdp.n_actions)


@dataclass
class PlanResult:
    pi: np.ndarray
    v: np.ndarray
    iterations: int
    history: list = field(default_factory=list)


def policy_iteration(mdp: Mdp, pi0=None, max_iter: int = 10_000) -> PlanResult:
    """Exact evaluation then greedy improvement until the policy repeats.

    ``history`` holds the value of every evaluated policy.
    """
    pi = deterministic_policy(np.zeros(mdp.n_states, dtype=int), mdp.n_actions) if pi0 is None else _check_policy(mdp, pi0)
    history = []
    for it in range(1, max_iter + 1):
        v = policy_evaluate_exact(mdp, pi)
        history.append(v)
        new = greedy_policy(mdp, v)
        if np.array_equal(new, pi):
            return PlanResult(pi, v, it, history)
        pi = new
    raise NumericError("policy iteration did not terminate", last=pi)


def value_iteration(mdp: Mdp, tol: float = 1e-10, v0=None, max_iter: int = 100_000) -> PlanResult:
    """Iterate v <- T* v until the sup-norm change drops below ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states) if v0 is None else _check_v(mdp, v0).copy()
    history = [v]
    for it in range(1, max_iter + 1):
        new = bellman_backup_opt(mdp, v)
        history.append(new)
        done = np.max(np.abs(new - v)) < tol
        v = new
        if done:
            return PlanResult(greedy_policy(mdp, v), v, it, history)
    raise NumericError("value iteration did not converge", last=v)


def brute_force_optimal(mdp: Mdp) -> PlanResult:
    """Evaluate every deterministic policy; return the componentwise best one."""
    best_v, best_pi, count = None, None, 0
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        pi = deterministic_policy(actions, mdp.n_actions)
        v = policy_evaluate_exact(mdp, pi)
        count += 1
        if best_v is None or v.sum() > best_v.sum():
            best_v, best_pi = v, pi
    return PlanResult(best_pi, best_v, count)


# --- sampling and model-free learners -------------------------------------

@dataclass
class Episode:
    """(state, action, reward) triples; reward is the one received after the action.

    ``final_state`` is the state reached after the last step and
    ``terminated`` tells whether it is terminal (no bootstrap) or the
    episode was cut at the horizon.
    """

    steps: list
    final_state: int
    terminated: bool

    def __len__(self):
        return len(self.steps)


def env_step(mdp: Mdp, s: int, a: int, rng) -> tuple:
    s2 = int(rng.choice(mdp.n_states, p=mdp.P[s, a]))
    return float(mdp.r[s, a]), s2


def sample_episode(mdp: Mdp, pi, rng, start: int, horizon: int = 200) -> Episode:
    pi = _check_policy(mdp, pi)
    steps, s = [], int(start)
    for _ in range(horizon):
        if s in mdp.terminal:
            return Episode(steps, s, True)
        a = int(rng.choice(mdp.n_actions, p=pi[s]))
        rew, s2 = env_step(mdp, s, a, rng)
        steps.append((s, a, rew))
        s = s2
    return Episode(steps, s, s in mdp.terminal)


Alpha = Union[float, Callable[[int], float]]


def count_schedule(count: int) -> float:
    """Default learning rate 1 / (visits + 1)."""
    return 1.0 / (count + 1)


def _alpha_fn(alpha: Optional[Alpha]):
    if alpha is None:
        return count_schedule
    if callable(alpha):
        return alpha
    a = float(alpha)
    return lambda count: a


def lambda_returns(episode: Episode, v, lam: float, gamma: float) -> np.ndarray:
    """Forward-view lambda returns G_t = r_t + gamma [(1 - lam) v(s_{t+1}) + lam G_{t+1}]."""
    T = len(episode)
    G = np.zeros(T)
    nxt = 0.0 if episode.terminated else v[episode.final_state]
    vnext = nxt
    for t in range(T - 1, -1, -1):
        _, _, rew = episode.steps[t]
        G[t] = rew + gamma * ((1 - lam) * vnext + lam * nxt)
        nxt = G[t]
        vnext = v[episode.steps[t][0]]
    return G


def td_lambda_evaluate(episodes: Sequence[Episode], lam: float, gamma: float, alpha: Optional[Alpha] = None,
                       v0=None, n_states: Optional[int] = None) -> np.ndarray:
    """Offline forward-view TD(lambda); lam=0 is TD(0), lam=1 every-visit Monte Carlo.

    Targets for an episode are computed with the values held at its start,
    then applied visit by visit.
    """
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    if v0 is None:
        if n_states is None:
            raise ValueError("give v0 or n_states")
        v0 = np.zeros(n_states)
    v = np.array(v0, dtype=float)
    counts = np.zeros(len(v), dtype=int)
    afn = _alpha_fn(alpha)
    for ep in episodes:
        G = lambda_returns(ep, v, lam, gamma)
        for (s, _, _), g in zip(ep.steps, G):
            v[s] += afn(counts[s]) * (g - v[s])
            counts[s] += 1
    return v


def monte_carlo_evaluate(episodes, gamma, alpha=None, v0=None, n_states=None):
    return td_lambda_evaluate(episodes, 1.0, gamma, alpha, v0, n_states)


@dataclass(frozen=True)
class LearnerConfig:
    epsilon: float = 0.1
    alpha: Optional[Alpha] = None      # None -> 1 / (count(s, a) + 1)
    max_steps: int = 50_000            # total environment steps
    horizon: int = 200
    start: Optional[int] = None        # None -> uniform over non-terminal states

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")


@dataclass
class LearnResult:
    q: np.ndarray
    visits: np.ndarray
    steps: int
    episodes: int


def epsilon_greedy(q_row, epsilon: float, rng) -> int:
    """Probability eps/|A| + 1 - eps on the (lowest-index) greedy action."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))


def _learn(mdp: Mdp, cfg: LearnerConfig, seed: int, q0, off_policy: bool) -> LearnResult:
    rng = make_rng(seed, "q_learning" if off_policy else "sarsa")
    q = np.zeros(mdp.r.shape) if q0 is None else np.array(q0, dtype=float)
    visits = np.zeros(mdp.r.shape, dtype=int)
    afn = _alpha_fn(cfg.alpha)
    starts = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    steps = episodes = 0
    while steps < cfg.max_steps:
        s = cfg.start if cfg.start is not None else starts[int(rng.integers(len(starts)))]
        a = epsilon_greedy(q[s], cfg.epsilon, rng)
        episodes += 1
        for _ in range(cfg.horizon):
            if s in mdp.terminal or steps >= cfg.max_steps:
                break
            rew, s2 = env_step(mdp, s, a, rng)
            a2 = epsilon_greedy(q[s2], cfg.epsilon, rng)
            if s2 in mdp.terminal:
                nxt = 0.0
            else:
                nxt = q[s2].max() if off_policy else q[s2, a2]
            q[s, a] += afn(visits[s, a]) * (rew + mdp.gamma * nxt - q[s, a])
            visits[s, a] += 1
            steps += 1
            s, a = s2, a2
    return LearnResult(q, visits, steps, episodes)


def sarsa(mdp: Mdp, cfg: LearnerConfig = LearnerConfig(), seed: int = 0, q0=None) -> LearnResult:
    """On-policy TD control with epsilon-greedy exploration."""
    return _learn(mdp, cfg, seed, q0, off_policy=False)


def q_learning(mdp: Mdp, cfg: LearnerConfig = LearnerConfig(), seed: int = 0, q0=None) -> LearnResult:
    """Off-policy TD control bootstrapping on max_a' q(s', a')."""
    return _learn(mdp, cfg, seed, q0, off_policy=True)


def greedy_agrees(q, mdp: Mdp, v_star, tol: float = 1e-9) -> bool:
    """True when every non-terminal greedy action of ``q`` is optimal under v*."""
    qstar = q_from_v(mdp, v_star)
    for s in range(mdp.n_states):
        if s in mdp.terminal:
            continue
        if qstar[s, int(np.argmax(q[s]))] < qstar[s].max() - tol:
            return False
    return True
