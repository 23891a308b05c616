import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from mfdl.errors import ShapeError
from mfdl.rl import (
    LearnerConfig,
    Mdp,
    bellman_backup_opt,
    bellman_backup_pi,
    brute_force_optimal,
    greedy_agrees,
    greedy_policy,
    gridworld,
    lambda_returns,
    policy_evaluate_exact,
    policy_iteration,
    q_from_v,
    q_learning,
    random_mdp,
    sample_episode,
    sarsa,
    td_lambda_evaluate,
    value_iteration,
)
from mfdl.rng import make_rng


def one_state(r=1.0, gamma=0.9):
    return Mdp(np.ones((1, 1, 1)), np.array([[r]]), gamma)


def random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def chain(length=3, gamma=0.5):
    """Deterministic chain 0 -> 1 -> ... -> length (terminal), reward 1 per step."""
    S = length + 1
    P = np.zeros((S, 1, S))
    for s in range(length):
        P[s, 0, s + 1] = 1.0
    P[length, 0, length] = 1.0
    r = np.ones((S, 1))
    r[length] = 0.0
    return Mdp(P, r, gamma, terminal=(length,))


class TestMdp:
    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            Mdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9)
        with pytest.raises(ValueError):
            Mdp(np.ones((1, 1, 1)), np.zeros((1, 1)), 1.0)
        with pytest.raises(ShapeError):
            Mdp(np.ones((1, 1, 1)), np.zeros((2, 1)), 0.5)

    def test_json_roundtrip(self):
        mdp = random_mdp(4, 2, seed=3)
        back = Mdp.from_json(mdp.to_json())
        np.testing.assert_array_equal(back.P, mdp.P)
        np.testing.assert_array_equal(back.r, mdp.r)
        assert back.gamma == mdp.gamma

    def test_gridworld_layout(self):
        g = gridworld()
        assert g.n_states == 16 and g.n_actions == 4 and g.terminal == (15,)
        assert g.P[0, 0, 0] == 1.0   # up from the corner bounces
        assert g.P[0, 3, 1] == 1.0   # right
        assert g.P[0, 1, 4] == 1.0   # down
        assert np.all(g.r[15] == 0) and np.all(g.r[:15] == -1)


class TestBellmanOperators:
    def test_single_state(self):
        assert bellman_backup_pi(one_state(), np.ones((1, 1)), np.zeros(1))[0] == 1.0

    def test_opt_at_zero_is_max_reward(self):
        mdp = random_mdp(5, 3, seed=1)
        np.testing.assert_array_equal(bellman_backup_opt(mdp, np.zeros(5)), mdp.r.max(axis=1))

    def test_fixed_point_of_policy_value(self):
        mdp = random_mdp(6, 3, seed=2)
        pi = random_policy(np.random.default_rng(0), 6, 3)
        v = policy_evaluate_exact(mdp, pi)
        np.testing.assert_allclose(bellman_backup_pi(mdp, pi, v), v, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_contraction_and_ordering(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(int(rng.integers(2, 8)), int(rng.integers(1, 4)), gamma=float(rng.uniform(0.5, 0.99)), seed=seed)
        S, A = mdp.r.shape
        pi = random_policy(rng, S, A)
        v, w = rng.normal(scale=5, size=(2, S))
        dist = np.max(np.abs(v - w))
        assert np.max(np.abs(bellman_backup_pi(mdp, pi, v) - bellman_backup_pi(mdp, pi, w))) <= mdp.gamma * dist + 1e-12
        assert np.max(np.abs(bellman_backup_opt(mdp, v) - bellman_backup_opt(mdp, w))) <= mdp.gamma * dist + 1e-12
        assert np.all(bellman_backup_pi(mdp, pi, v) <= bellman_backup_opt(mdp, v) + 1e-12)
        hi = v + np.abs(rng.normal(size=S))
        assert np.all(bellman_backup_opt(mdp, v) <= bellman_backup_opt(mdp, hi) + 1e-12)

    def test_tie_break_lowest_action(self):
        mdp = Mdp(np.ones((1, 3, 1)), np.zeros((1, 3)), 0.9)
        _, arg = bellman_backup_opt(mdp, np.zeros(1), return_argmax=True)
        assert arg[0] == 0
        np.testing.assert_array_equal(greedy_policy(mdp, np.zeros(1)), [[1, 0, 0]])

    def test_unique_fixed_points(self):
        mdp = random_mdp(5, 2, seed=4)
        pi = random_policy(np.random.default_rng(1), 5, 2)
        rng = np.random.default_rng(2)
        a, b = rng.normal(scale=10, size=(2, 5))
        c, d = a.copy(), b.copy()
        for _ in range(400):
            a, b = bellman_backup_pi(mdp, pi, a), bellman_backup_pi(mdp, pi, b)
            c, d = bellman_backup_opt(mdp, c), bellman_backup_opt(mdp, d)
        assert np.max(np.abs(a - b)) < 1e-8 and np.max(np.abs(c - d)) < 1e-8


class TestPlanners:
    def test_single_state_value(self):
        np.testing.assert_allclose(policy_evaluate_exact(one_state(), np.ones((1, 1))), [10.0], rtol=1e-14)

    def test_zero_rewards(self):
        mdp = Mdp(random_mdp(4, 2, seed=0).P, np.zeros((4, 2)), 0.9)
        np.testing.assert_array_equal(policy_evaluate_exact(mdp, np.full((4, 2), 0.5)), 0.0)

    def test_exact_matches_iteration(self):
        mdp = random_mdp(6, 3, seed=5)
        pi = random_policy(np.random.default_rng(3), 6, 3)
        v = np.zeros(6)
        for _ in range(500):
            v = bellman_backup_pi(mdp, pi, v)
        np.testing.assert_allclose(policy_evaluate_exact(mdp, pi), v, atol=1e-8)

    def test_value_bound(self):
        mdp = random_mdp(6, 3, seed=6)
        pi = random_policy(np.random.default_rng(4), 6, 3)
        assert np.max(np.abs(policy_evaluate_exact(mdp, pi))) <= np.max(np.abs(mdp.r)) / (1 - mdp.gamma)

    def test_one_state_policy_iteration(self):
        assert policy_iteration(one_state()).iterations <= 2

    @pytest.mark.parametrize("seed", range(5))
    def test_policy_iteration_matches_brute_force(self, seed):
        mdp = random_mdp(6, 3, seed=seed)
        pi_res, bf = policy_iteration(mdp), brute_force_optimal(mdp)
        assert np.max(np.abs(pi_res.v - bf.v)) <= 1e-8
        assert pi_res.iterations <= 6 * 3
        for a, b in zip(pi_res.history, pi_res.history[1:]):
            assert np.all(b >= a - 1e-12)

    def test_greedy_of_optimal_is_optimal(self):
        mdp = random_mdp(7, 3, seed=7)
        vstar = policy_iteration(mdp).v
        np.testing.assert_allclose(policy_evaluate_exact(mdp, greedy_policy(mdp, vstar)), vstar, atol=1e-10)

    def test_policy_values_below_optimum(self):
        mdp = random_mdp(6, 3, seed=8)
        vstar = policy_iteration(mdp).v
        rng = np.random.default_rng(5)
        for _ in range(100):
            assert np.all(policy_evaluate_exact(mdp, random_policy(rng, 6, 3)) <= vstar + 1e-10)

    def test_value_iteration_from_optimum(self):
        mdp = random_mdp(5, 2, seed=9)
        vstar = policy_iteration(mdp).v
        assert value_iteration(mdp, tol=1e-8, v0=vstar).iterations == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_value_iteration_rate_and_policy(self, seed):
        mdp = random_mdp(6, 3, seed=seed)
        pi_res = policy_iteration(mdp)
        vi = value_iteration(mdp, tol=1e-12)
        errs = np.array([np.max(np.abs(v - pi_res.v)) for v in vi.history])
        for k, e in enumerate(errs):
            assert e <= mdp.gamma ** k * errs[0] + 1e-10
        use = errs > 1e-9
        slope = np.polyfit(np.arange(len(errs))[use], np.log(errs[use]), 1)[0]
        assert slope <= np.log(mdp.gamma) + 0.02
        np.testing.assert_array_equal(vi.pi, pi_res.pi)

    def test_gridworld_values(self):
        g = gridworld()
        v = value_iteration(g).v
        # Manhattan distance k to the goal costs -(1 - 0.9^k) / 0.1
        for s in range(16):
            i, j = divmod(s, 4)
            k = (3 - i) + (3 - j)
            np.testing.assert_allclose(v[s], -(1 - 0.9 ** k) / 0.1, atol=1e-9)


class TestEpisodesAndTd:
    def test_lambda_one_chain(self):
        mdp = chain(3, 0.5)
        ep = sample_episode(mdp, np.ones((4, 1)), make_rng(0), 0)
        assert ep.terminated and len(ep) == 3
        np.testing.assert_allclose(lambda_returns(ep, np.zeros(4), 1.0, 0.5), [1.75, 1.5, 1.0])
        v = td_lambda_evaluate([ep], 1.0, 0.5, n_states=4)
        assert v[0] == 1.75

    def test_zero_rate_keeps_values(self):
        mdp = chain(3, 0.5)
        ep = sample_episode(mdp, np.ones((4, 1)), make_rng(0), 0)
        v0 = np.array([0.3, -0.2, 0.1, 0.0])
        np.testing.assert_array_equal(td_lambda_evaluate([ep], 0.5, 0.5, alpha=0.0, v0=v0), v0)

    def test_td_zero_target_unbiased_at_true_values(self):
        mdp = random_mdp(4, 2, seed=10)
        pi = random_policy(np.random.default_rng(6), 4, 2)
        v = policy_evaluate_exact(mdp, pi)
        rng = make_rng(11)
        errs = []
        for _ in range(10_000):
            ep = sample_episode(mdp, pi, rng, int(rng.integers(4)), horizon=3)
            G = lambda_returns(ep, v, 0.0, mdp.gamma)
            errs.extend(G - v[[s for s, _, _ in ep.steps]])
        errs = np.array(errs)
        assert abs(errs.mean()) <= 3 * errs.std() / np.sqrt(errs.size)

    def test_monte_carlo_converges(self):
        mdp = random_mdp(3, 2, gamma=0.5, seed=12)
        pi = random_policy(np.random.default_rng(7), 3, 2)
        rng = make_rng(13)
        eps = [sample_episode(mdp, pi, rng, int(rng.integers(3)), horizon=60) for _ in range(4000)]
        v = td_lambda_evaluate(eps, 1.0, mdp.gamma, n_states=3)
        np.testing.assert_allclose(v, policy_evaluate_exact(mdp, pi), atol=0.05)

    def test_lambda_validation(self):
        with pytest.raises(ValueError):
            td_lambda_evaluate([], 1.5, 0.9, n_states=2)


class TestLearners:
    def test_q_learning_single_state(self):
        res = q_learning(one_state(), LearnerConfig(alpha=0.1, max_steps=2000))
        np.testing.assert_allclose(res.q[0, 0], 10.0, atol=1e-6)

    def test_terminal_stays_zero(self):
        g = gridworld()
        res = q_learning(g, LearnerConfig(epsilon=0.5, max_steps=5000), seed=0)
        np.testing.assert_array_equal(res.q[15], 0.0)

    def test_zero_rate(self):
        q0 = np.random.default_rng(0).normal(size=(16, 4))
        for learner in (sarsa, q_learning):
            res = learner(gridworld(), LearnerConfig(alpha=0.0, max_steps=500), seed=1, q0=q0)
            np.testing.assert_array_equal(res.q, q0)

    def test_sarsa_two_state_chain(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = P[1, 0, 0] = 1.0
        mdp = Mdp(P, np.array([[1.0], [-0.5]]), 0.8)
        exact = q_from_v(mdp, policy_evaluate_exact(mdp, np.ones((2, 1))))
        res = sarsa(mdp, LearnerConfig(alpha=lambda c: 0.1 if c < 1000 else 100.0 / c, max_steps=10_000, horizon=10_000, start=0))
        np.testing.assert_allclose(res.q, exact, atol=1e-2)

    def test_uniform_exploration(self):
        res = sarsa(gridworld(), LearnerConfig(epsilon=1.0, max_steps=20_000), seed=2)
        counts = res.visits.sum(axis=0)
        assert chisquare(counts).pvalue > 1e-3

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            LearnerConfig(epsilon=0.0)

    def test_seeded(self):
        a = q_learning(gridworld(), LearnerConfig(epsilon=0.5, max_steps=3000), seed=4)
        b = q_learning(gridworld(), LearnerConfig(epsilon=0.5, max_steps=3000), seed=4)
        np.testing.assert_array_equal(a.q, b.q)

    @pytest.mark.slow
    def test_q_learning_gridworld_policy(self):
        g = gridworld()
        vstar = value_iteration(g).v
        for seed in range(5):
            res = q_learning(g, LearnerConfig(epsilon=0.5, max_steps=50_000), seed=seed)
            assert greedy_agrees(res.q, g, vstar)

    def test_greedy_agrees_detects_wrong_action(self):
        g = gridworld()
        vstar = value_iteration(g).v
        q = q_from_v(g, vstar)
        assert greedy_agrees(q, g, vstar)
        q[0] = [0, 0, 5, 0]   # left from the corner is never optimal
        assert not greedy_agrees(q, g, vstar)
