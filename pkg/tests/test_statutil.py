import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from mfdl.errors import CapabilityError, PreconditionError
from mfdl.rng import make_rng
from mfdl.statutil import (
    GaussianParams,
    ImportanceSpec,
    divergence,
    entropy_gauss,
    euler_maruyama,
    importance_estimate,
    ito_check,
    js_discrete,
    kl_gauss,
    kl_poisson,
    uniform_spec,
    w2_gauss,
)


class TestImportance:
    def test_h_equal_density(self):
        for N in (1, 7, 1000):
            spec = ImportanceSpec(
                lambda x: stats.norm.pdf(x),
                lambda rng, n: rng.standard_normal(n),
                stats.norm.pdf,
                N,
            )
            assert importance_estimate(spec)[0] == 1.0

    def test_half_indicator(self):
        J, se = importance_estimate(uniform_spec(lambda x: (x <= 0.5).astype(float), 100_000, seed=1))
        assert abs(J - 0.5) <= 3 * se

    def test_variance_slope(self):
        Ns = [100, 1000, 10_000]
        var = []
        for N in Ns:
            rng = make_rng(2, N)
            est = [importance_estimate(uniform_spec(np.exp, N), rng)[0] for _ in range(200)]
            var.append(np.var(est, ddof=1))
        slope = np.polyfit(np.log(Ns), np.log(var), 1)[0]
        assert abs(slope + 1) <= 0.2

    def test_unbiased_against_quadrature(self):
        h = lambda x: np.sin(3 * x) ** 2 + x
        exact = integrate.quad(h, 0, 1)[0]
        rng = make_rng(3)
        est = np.array([importance_estimate(uniform_spec(h, 50), rng)[0] for _ in range(200)])
        assert abs(est.mean() - exact) <= 3 * est.std(ddof=1) / math.sqrt(est.size)

    def test_nonuniform_proposal(self):
        # integral of x^2 exp(-x) over [0, inf) is 2, proposal Exp(1)
        spec = ImportanceSpec(lambda x: x ** 2 * np.exp(-x), lambda rng, n: rng.exponential(size=n), lambda x: np.exp(-x), 50_000, 4)
        J, se = importance_estimate(spec)
        assert abs(J - 2) <= 4 * se

    def test_zero_density(self):
        spec = ImportanceSpec(lambda x: x, lambda rng, n: np.zeros(n), lambda x: np.zeros_like(x), 3)
        with pytest.raises(ZeroDivisionError):
            importance_estimate(spec)

    def test_bad_N(self):
        with pytest.raises(ValueError):
            uniform_spec(np.exp, 0)


class TestDivergences:
    def test_kl_identical(self):
        p = GaussianParams([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
        assert kl_gauss(p, p) <= 1e-12

    def test_kl_unit_shift(self):
        assert kl_gauss(GaussianParams([0.0], 1.0), GaussianParams([1.0], 1.0)) == pytest.approx(0.5, abs=1e-14)

    def test_kl_matches_scipy_entropy_form(self):
        # 1-D closed form log(s2/s1) + (s1^2 + dm^2)/(2 s2^2) - 1/2
        s1, s2, dm = 0.7, 1.9, 0.4
        ref = math.log(s2 / s1) + (s1 ** 2 + dm ** 2) / (2 * s2 ** 2) - 0.5
        assert kl_gauss(GaussianParams([0.0], s1 ** 2), GaussianParams([dm], s2 ** 2)) == pytest.approx(ref, rel=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 100_000))
    def test_kl_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        mats = []
        for _ in range(2):
            A = rng.normal(size=(d, d))
            mats.append(GaussianParams(rng.normal(size=d), A @ A.T + 0.1 * np.eye(d)))
        assert kl_gauss(*mats) >= 0
        assert kl_gauss(mats[0], mats[0]) <= 1e-10

    def test_entropy_matches_scipy(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        ref = stats.multivariate_normal(np.zeros(2), S).entropy()
        assert entropy_gauss(GaussianParams(np.zeros(2), S)) == pytest.approx(ref, rel=1e-13)

    def test_poisson(self):
        assert kl_poisson(3.0, 3.0) == 0.0
        assert kl_poisson(2.0, 1.0) == pytest.approx(2 * math.log(2) - 1)
        with pytest.raises(PreconditionError):
            kl_poisson(0.0, 1.0)

    def test_js_disjoint(self):
        assert js_discrete([1, 0, 0, 0], [0, 0, 0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 100_000))
    def test_js_symmetric_bounded(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        p, q = rng.dirichlet(np.full(n, 0.3), size=2)
        a = js_discrete(p, q)
        assert a == js_discrete(q, p)
        assert -1e-12 <= a <= math.log(2) + 1e-12

    def test_js_matches_scipy(self):
        p, q = np.array([0.1, 0.6, 0.3]), np.array([0.5, 0.25, 0.25])
        from scipy.spatial.distance import jensenshannon
        assert js_discrete(p, q) == pytest.approx(jensenshannon(p, q) ** 2, rel=1e-12)

    def test_w2(self):
        assert w2_gauss(GaussianParams([0.0], 1.0), GaussianParams([3.0], 1.0)) == 3.0
        assert w2_gauss(GaussianParams([0.0, 0.0], [1.0, 4.0]), GaussianParams([0.0, 0.0], [4.0, 1.0])) == pytest.approx(math.sqrt(2))
        with pytest.raises(CapabilityError):
            w2_gauss(GaussianParams([0.0, 0.0], np.eye(2)), GaussianParams([0.0, 0.0], 1.0))

    def test_singular_covariance(self):
        with pytest.raises(PreconditionError):
            GaussianParams([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(PreconditionError):
            GaussianParams([0.0], 0.0)

    def test_dispatch(self):
        assert divergence("kl_poisson", 2.0, 2.0) == 0.0
        with pytest.raises(ValueError):
            divergence("tv", 1, 2)


class TestEulerMaruyama:
    def test_zero_coefficients(self):
        res = euler_maruyama(lambda t, x: 0 * x, lambda t, x: 0.0, [1.5, -2.0], 1.0, 0.1, paths=5)
        np.testing.assert_array_equal(res.x_T, np.tile([1.5, -2.0], (5, 1)))

    def test_brownian_variance(self):
        N, T = 10_000, 2.0
        res = euler_maruyama(lambda t, x: 0 * x, lambda t, x: 1.0, 0.0, T, 0.05, seed=1, paths=N)
        var = res.x_T.var(ddof=1)
        # sample variance of N normals has sd T sqrt(2/(N-1))
        assert abs(var - T) <= 3 * T * math.sqrt(2 / (N - 1))

    def test_ou_mean(self):
        res = euler_maruyama(lambda t, x: -x, lambda t, x: 0.0, 1.0, 1.0, 1e-3)
        assert res.x_T[0, 0] == pytest.approx(math.exp(-1), rel=1e-3)

    def test_step_hits_horizon(self):
        res = euler_maruyama(lambda t, x: 0 * x, lambda t, x: 1.0, 0.0, 1.0, 0.3)
        assert res.steps == 3 and res.h * res.steps == pytest.approx(1.0, abs=1e-15)

    def test_ito_decreasing(self):
        errs = [ito_check(1.0, h, 2000, seed=5) for h in (0.04, 0.02, 0.01, 0.005)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_deterministic(self):
        a = euler_maruyama(lambda t, x: -x, lambda t, x: 0.5, 0.3, 1.0, 0.01, seed=9, paths=4)
        b = euler_maruyama(lambda t, x: -x, lambda t, x: 0.5, 0.3, 1.0, 0.01, seed=9, paths=4)
        np.testing.assert_array_equal(a.x_T, b.x_T)

    def test_blow_up(self):
        from mfdl.errors import DivergenceError
        with pytest.raises(DivergenceError):
            with np.errstate(over="ignore", invalid="ignore"):
                euler_maruyama(lambda t, x: x ** 3, lambda t, x: 0.0, 10.0, 1.0, 0.1)
