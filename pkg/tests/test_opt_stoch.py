import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfdl.errors import DomainError, NumericError, ShapeError
from mfdl.nn import MlpSpec, param_slices
from mfdl.objectives import sg_family
from mfdl.optim import (
    DEFAULTS,
    METHODS,
    MuonConfig,
    init_state,
    muon_step,
    newton_schulz,
    ns_scalar_map,
    oscillation_band,
    robbins_monro,
    sg_run,
    state_from_json,
    stochastic_step,
)

G = np.array([0.3, -2.0])
X = np.array([1.0, -0.5])


def hand_first_step(method, x, g):
    """Update equations written out for k = 1 from zero buffers."""
    h = DEFAULTS[method]
    a = h["alpha"]
    if method == "sgd":
        return x - a * g
    if method == "momentum":
        return x - a * (1 - h["beta1"]) * g
    if method == "adagrad":
        return x - a * g / (np.sqrt(g * g) + h["eps"])
    if method == "rmsprop":
        return x - a * g / (np.sqrt((1 - h["beta2"]) * g * g) + h["eps"])
    mhat = (1 - h["beta1"]) * g / (1 - h["beta1"])
    vhat = (1 - h["beta2"]) * g * g / (1 - h["beta2"])
    step = mhat / (np.sqrt(vhat) + h["eps"])
    if method == "adam":
        return x - a * step
    return x - a * h["weight_decay"] * x - a * step


class TestStochasticStep:
    @pytest.mark.parametrize("method", ["sgd", "momentum", "adagrad", "rmsprop", "adam", "adamw"])
    def test_first_step_matches_hand_formula(self, method):
        new, st_ = stochastic_step(init_state(method, 2), X, G)
        np.testing.assert_allclose(new, hand_first_step(method, X, G), rtol=0, atol=1e-14)
        assert st_.k == 2

    def test_adam_first_step_is_signed(self):
        new, _ = stochastic_step(init_state("adam", 2), X, G)
        np.testing.assert_allclose(new - X, -1e-3 * np.sign(G), rtol=1e-7)

    def test_sgd_zero_gradient(self):
        new, _ = stochastic_step(init_state("sgd", 2), X, np.zeros(2))
        np.testing.assert_array_equal(new, X)

    def test_adamw_without_decay_is_adam(self):
        rng = np.random.default_rng(0)
        sa, sw = init_state("adam", 3), init_state("adamw", 3, weight_decay=0.0)
        ta = tw = rng.normal(size=3)
        for _ in range(5):
            g = rng.normal(size=3)
            ta, sa = stochastic_step(sa, ta, g)
            tw, sw = stochastic_step(sw, tw, g)
            np.testing.assert_array_equal(ta, tw)

    def test_adagrad_denominator_grows(self):
        rng = np.random.default_rng(1)
        s, t = init_state("adagrad", 4), np.zeros(4)
        prev = np.sqrt(s.v)
        for _ in range(20):
            t, s = stochastic_step(s, t, rng.normal(size=4))
            assert np.all(np.sqrt(s.v) >= prev)
            prev = np.sqrt(s.v)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(METHODS[:-1]), st.integers(0, 10_000))
    def test_pure_and_deterministic(self, method, seed):
        rng = np.random.default_rng(seed)
        s = init_state(method, 3)
        theta, g = rng.normal(size=3), rng.normal(size=3)
        theta0, g0 = theta.copy(), g.copy()
        a = stochastic_step(s, theta, g)
        b = stochastic_step(s, theta, g)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(theta, theta0)
        np.testing.assert_array_equal(g, g0)
        assert np.all(a[1].v >= 0) and s.k == 1

    def test_nan_gradient(self):
        s = init_state("adam", 2)
        with pytest.raises(NumericError):
            stochastic_step(s, X, np.array([np.nan, 0.0]))
        assert s.k == 1 and not np.any(s.m)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            stochastic_step(init_state("sgd", 2), X, np.ones(3))

    def test_unknown_hyperparameter(self):
        with pytest.raises(ValueError):
            init_state("sgd", 2, beta1=0.5)

    def test_json_config(self):
        s = state_from_json('{"method": "adam", "alpha": 0.01, "beta1": 0.8}', 2)
        assert s.method == "adam" and s.hyper["alpha"] == 0.01 and s.hyper["beta1"] == 0.8


class TestNewtonSchulz:
    def test_orthogonal_fixed_point(self):
        U, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
        O = newton_schulz(U * 2.0, coeffs=(2.0, -1.5, 0.5), K=200, eps=1e-15)
        np.testing.assert_allclose(O, U, atol=1e-10)

    def test_diag_example_against_scalar_oracle(self):
        M = np.diag([0.5, 0.25])
        O = newton_schulz(M)
        sv = np.sort(np.linalg.svd(O, compute_uv=False))
        oracle = np.sort(ns_scalar_map(np.array([0.5, 0.25]) / (np.linalg.norm(M) + 1e-7)))
        np.testing.assert_allclose(sv, oracle, rtol=1e-12)
        assert np.all((sv >= 0.68) & (sv <= 1.3))

    def test_rank_one(self):
        rng = np.random.default_rng(2)
        u, v = rng.normal(size=5), rng.normal(size=3)
        O = newton_schulz(np.outer(u, v))
        target = np.outer(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        # the normalized singular value is 1 - tiny, which the quintic maps near 1
        sv = ns_scalar_map(np.linalg.norm(np.outer(u, v)) / (np.linalg.norm(np.outer(u, v)) + 1e-7))
        np.testing.assert_allclose(O, sv * target, atol=1e-10)
        assert abs(sv - 1) < 0.31

    def test_zero_matrix(self):
        with pytest.raises(DomainError):
            newton_schulz(np.zeros((2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_singular_vectors_kept_and_values_follow_scalar_map(self, seed):
        rng = np.random.default_rng(seed)
        r, c = int(rng.integers(1, 33)), int(rng.integers(1, 17))
        M = rng.normal(size=(r, c))
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
        O = newton_schulz(M)
        expect = (U * ns_scalar_map(S / (np.linalg.norm(M) + 1e-7))) @ Vt
        np.testing.assert_allclose(O, expect, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_near_orthogonality(self, seed):
        rng = np.random.default_rng(seed)
        r, c = int(rng.integers(1, 33)), int(rng.integers(1, 17))
        M = rng.normal(size=(r, c))
        O = newton_schulz(M)
        small = O @ O.T if r <= c else O.T @ O
        # every output singular value is phi^5 of a normalized value in [s_min, 1]; on
        # s >= 0.0016 the scalar oracle gives |phi^5(s)^2 - 1| <= 0.536
        s_min = np.linalg.svd(M, compute_uv=False).min() / (np.linalg.norm(M) + 1e-7)
        grid = ns_scalar_map(np.linspace(min(s_min, 0.0016), 1.0, 200_001))
        bound = np.max(np.abs(grid ** 2 - 1))
        if s_min >= 0.0016:
            assert bound < 0.54
        assert np.linalg.norm(small - np.eye(min(r, c))) <= bound * math.sqrt(min(r, c))


class TestMuon:
    def test_decay_only(self):
        cfg = MuonConfig()
        W = np.ones((2, 3))
        new_W, new_M = muon_step(cfg, [W], [np.zeros((2, 3))], [np.zeros((2, 3))])
        np.testing.assert_allclose(new_W[0], W * (1 - cfg.alpha * cfg.weight_decay))
        np.testing.assert_array_equal(new_M[0], 0.0)

    def test_direction_without_momentum(self):
        cfg = MuonConfig(momentum=0.0, weight_decay=0.0, alpha=1.0)
        rng = np.random.default_rng(3)
        W, G = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        new_W, _ = muon_step(cfg, [W], [G], [np.zeros_like(G)])
        np.testing.assert_allclose(W - new_W[0], newton_schulz(G), atol=1e-14)

    def test_direction_norm(self):
        cfg = MuonConfig(momentum=0.0, weight_decay=0.0, alpha=1.0)
        rng = np.random.default_rng(4)
        for r, c in [(8, 8), (16, 4), (5, 12)]:
            W, G = np.zeros((r, c)), rng.normal(size=(r, c))
            O = -muon_step(cfg, [W], [G], [np.zeros_like(G)])[0][0]
            np.testing.assert_allclose(np.linalg.norm(O), math.sqrt(min(r, c)), rtol=0.3)

    def test_momentum_accumulates(self):
        cfg = MuonConfig(momentum=0.5)
        G = np.eye(2)
        _, M1 = muon_step(cfg, [np.zeros((2, 2))], [G], [np.eye(2)])
        np.testing.assert_allclose(M1[0], 1.5 * np.eye(2))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            muon_step(MuonConfig(), [np.zeros((2, 2))], [np.zeros((2, 3))], [np.zeros((2, 2))])

    def test_routed_through_stochastic_step(self):
        spec = MlpSpec((3, 4, 2))
        slices = param_slices(spec)
        s = init_state("muon", spec.n_params, matrix_slices=slices)
        rng = np.random.default_rng(5)
        theta, g = rng.normal(size=spec.n_params), rng.normal(size=spec.n_params)
        new, s2 = stochastic_step(s, theta, g)
        a, b, shape = slices[0]
        W_ref, _ = muon_step(s.muon, [theta[a:b].reshape(shape)], [g[a:b].reshape(shape)], [np.zeros(shape)])
        np.testing.assert_allclose(new[a:b], W_ref[0].reshape(-1), rtol=1e-14)
        bias = slice(slices[0][1], slices[1][0])
        adamw, _ = stochastic_step(init_state("adamw", spec.n_params), theta, g)
        np.testing.assert_allclose(new[bias], adamw[bias], rtol=1e-14)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            MuonConfig(ns_iters=0)
        with pytest.raises(ValueError):
            MuonConfig(matrix_shapes=((0, 2),))


class TestStochasticGradient:
    def test_robbins_monro_reaches_band(self):
        xs = sg_run(sg_family(101), 1.0, 5000, robbins_monro(), seed=0)
        avg = np.cumsum(xs) / np.arange(1, xs.size + 1)
        assert abs(avg[-1]) < 0.05
        assert np.any(np.abs(xs) < 0.05)

    def test_seeded_runs_repeat(self):
        fam = sg_family(11)
        np.testing.assert_array_equal(sg_run(fam, 1.0, 50, 0.1, seed=3), sg_run(fam, 1.0, 50, 0.1, seed=3))
        assert not np.array_equal(sg_run(fam, 1.0, 50, 0.1, seed=3), sg_run(fam, 1.0, 50, 0.1, seed=4))

    def test_full_batch_limit(self):
        # mean of many component gradients is the full gradient 2x, so x contracts by (1 - 2 alpha)
        xs = sg_run(sg_family(3), 1.0, 5, 0.1, seed=0, batch=200_000)
        np.testing.assert_allclose(xs, 0.8 ** np.arange(6), atol=5e-3)

    def test_constant_step_band_shrinks_on_average(self):
        ratios = []
        for seed in range(5):
            big = oscillation_band(sg_run(sg_family(101), 0.0, 6000, 0.1, seed=seed))
            small = oscillation_band(sg_run(sg_family(101), 0.0, 6000, 0.05, seed=seed))
            ratios.append(small / big)
        # stationary std of x_{k+1} = (1 - 2a) x_k + 2a z gives sqrt((0.05/0.95) / (0.1/0.9)) = 0.688
        assert np.mean(ratios) < 0.75
        assert abs(np.mean(ratios) - math.sqrt((0.05 / 0.95) / (0.1 / 0.9))) < 0.06

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            robbins_monro(k0=0)
        assert robbins_monro(10, 2)(0) == 0.2
