import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfdl.autodiff import evaluate
from mfdl.errors import CapabilityError, DomainError
from mfdl.uat import (
    TaylorOracle,
    multi_indices,
    partition_bump,
    product_net,
    psi,
    relu_error_budget,
    sawtooth,
    square_approx,
    square_approx_graph,
    square_level,
    taylor_coefficients,
    taylor_partition_approx,
)


def sin_oracle():
    def deriv(kv, x):
        (k,) = kv
        return [math.sin, math.cos][k % 2](math.pi * x[0]) * math.pi ** k * (1 if k % 4 < 2 else -1)
    return TaylorOracle(deriv, 1, 2)


def sawtooth_closed_form(s, x):
    """g_s(x) = 2^s (x - 2k/2^s) on [2k/2^s, (2k+1)/2^s], 2^s ((2k+2)/2^s - x) on the other half."""
    t = x * 2 ** s
    k = np.floor(t / 2)
    r = t - 2 * k
    return np.where(r <= 1, r, 2 - r)


def all_bumps(N, d, x):
    return sum(partition_bump(N, m, x) for m in itertools.product(range(N + 1), repeat=d))


class TestSawtooth:
    def test_first_tooth(self):
        assert sawtooth(1, 0.25) == 0.5
        assert sawtooth(1, 0.5) == 1.0

    def test_third_tooth_peak(self):
        assert sawtooth(3, 1 / 8) == 1.0

    @pytest.mark.parametrize("s", range(1, 11))
    def test_endpoints(self, s):
        assert sawtooth(s, 0.0) == 0.0 and sawtooth(s, 1.0) == 0.0

    @given(st.integers(1, 12), st.floats(0, 1))
    def test_matches_closed_form(self, s, x):
        np.testing.assert_allclose(sawtooth(s, x), sawtooth_closed_form(s, x), atol=1e-12)

    @pytest.mark.parametrize("s", range(1, 8))
    def test_tooth_count(self, s):
        x = np.linspace(0, 1, 2 ** (s + 4) + 1)
        y = sawtooth(s, x)
        peaks = np.sum((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:]) | (y[1:-1] == 1.0))
        assert peaks == 2 ** (s - 1)

    def test_outside_interval(self):
        with pytest.raises(DomainError):
            sawtooth(2, 1.5)


class TestSquareApprox:
    def test_identity_level(self):
        assert square_approx(0, 0.5) == 0.5

    def test_level_three(self):
        x = np.linspace(0, 1, 2 ** 6 + 1)
        err = np.abs(x * x - square_approx(3, x))
        assert err.max() == 1 / 256
        assert err[np.searchsorted(x, 15 / 16)] == 1 / 256

    @pytest.mark.parametrize("m", range(0, 9))
    def test_interpolates_dyadic_grid(self, m):
        x = np.arange(2 ** m + 1) / 2 ** m
        np.testing.assert_array_equal(square_approx(m, x), x * x)

    @pytest.mark.parametrize("m", range(1, 9))
    def test_max_error_attained_at_midpoint(self, m):
        xs = 1 - 2.0 ** -(m + 1)
        assert abs(xs * xs - square_approx(m, xs)) == 2.0 ** -(2 * m + 2)

    @pytest.mark.parametrize("m", range(1, 7))
    def test_breakpoints_are_dyadic(self, m):
        x = np.arange(2 ** (m + 4) + 1) / 2 ** (m + 4)
        second = np.diff(square_approx(m, x), 2)
        kinks = x[1:-1][np.abs(second) > 1e-12]
        np.testing.assert_array_equal(kinks * 2 ** m, np.round(kinks * 2 ** m))

    @pytest.mark.parametrize("m", [1, 3, 6])
    def test_graph_form_agrees(self, m):
        g = square_approx_graph(m)
        for x in np.linspace(0, 1, 97):
            assert abs(evaluate(g, [x]) - square_approx(m, x)) <= 1e-12

    def test_level_selection(self):
        for delta in (0.3, 1e-2, 1e-3, 1e-6):
            m = square_level(delta)
            assert 2.0 ** -(2 * m + 2) <= delta
            assert m == 0 or 2.0 ** -(2 * m) > delta


class TestProductNet:
    @given(st.floats(-4, 4))
    def test_zero_factor(self, b):
        assert product_net(1e-3, 4, 0.0, b) == 0.0
        assert product_net(1e-3, 4, b, 0.0) == 0.0

    def test_half_times_half(self):
        assert abs(product_net(1e-3, 1, 0.5, 0.5) - 0.25) <= 1e-3

    @pytest.mark.parametrize("eps", [1e-2, 1e-3])
    @pytest.mark.parametrize("M", [1.0, 4.0])
    def test_grid_error_bound(self, eps, M):
        g = np.linspace(-M, M, 101)
        A, B = np.meshgrid(g, g)
        assert np.max(np.abs(product_net(eps, M, A, B) - A * B)) <= eps

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            product_net(1e-2, 1, 1.5, 0.0)
        with pytest.raises(ValueError):
            product_net(1.5, 1, 0.5, 0.5)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([0.5, 1e-1, 1e-2, 1e-4]))
    def test_random_points(self, a, b, eps):
        assert abs(product_net(eps, 3, a, b) - a * b) <= eps


class TestPartition:
    def test_trapezoid(self):
        np.testing.assert_array_equal(psi([0.0, 1.0, 1.5, -1.5, 2.0, 3.0]), [1, 1, 0.5, 0.5, 0, 0])

    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("N", [2, 4, 8])
    def test_partition_of_unity(self, d, N):
        X = np.random.default_rng(d * 10 + N).uniform(size=(1000, d))
        assert np.max(np.abs(all_bumps(N, d, X) - 1)) <= 1e-12

    def test_peak_value(self):
        for m in itertools.product(range(5), repeat=2):
            assert partition_bump(4, m, np.array(m) / 4) == 1.0

    @given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 6))
    def test_support(self, x1, x2, m1):
        N = 6
        v = partition_bump(N, (m1, 3), np.array([x1, x2]))
        assert 0.0 <= v <= 1.0
        if abs(x1 - m1 / N) > 2 / (3 * N):
            assert v == 0.0

    def test_index_range(self):
        with pytest.raises(DomainError):
            partition_bump(2, (3,), np.array([0.5]))


class TestTaylorAssembly:
    def test_multi_indices(self):
        assert multi_indices(2, 2) == [(0, 0), (0, 1), (1, 0)]

    def test_constant_function(self):
        o = TaylorOracle(lambda kv, x: 3.5 if sum(kv) == 0 else 0.0, 2, 2)
        for x in np.random.default_rng(0).uniform(size=(20, 2)):
            np.testing.assert_allclose(taylor_partition_approx(o, 4, "exact_fN", x), 3.5, rtol=1e-14)

    def test_linear_reproduced(self):
        o = TaylorOracle(lambda kv, x: x[0] if kv == (0,) else (1.0 if kv == (1,) else 0.0), 1, 2)
        for x in np.linspace(0, 1, 41):
            np.testing.assert_allclose(taylor_partition_approx(o, 3, "exact_fN", np.array([x])), x, atol=1e-14)

    def test_sine_error_bound_and_rate(self):
        o = sin_oracle()
        grid = np.linspace(0, 1, 1001)
        errs = {}
        for N in (2, 4, 8):
            c = taylor_coefficients(o, N)
            approx = np.array([taylor_partition_approx(o, N, "exact_fN", np.array([x]), coeffs=c) for x in grid])
            errs[N] = np.max(np.abs(approx - np.sin(math.pi * grid)))
            # 2^d d^k |f|_{W^{2,inf}} / N^k with d = 1, k = 2
            assert errs[N] <= 2 * math.pi ** 2 / N ** 2
        assert errs[2] / errs[4] > 2.5 and errs[4] / errs[8] > 2.5

    @pytest.mark.parametrize("delta", [1e-2, 1e-3])
    def test_relu_form_within_budget_1d(self, delta):
        o = sin_oracle()
        c = taylor_coefficients(o, 4)
        budget = relu_error_budget(o, 4, delta, c)
        for x in np.linspace(0, 1, 61):
            xv = np.array([x])
            gap = taylor_partition_approx(o, 4, "relu_composed_h", xv, delta, c) - taylor_partition_approx(o, 4, "exact_fN", xv, coeffs=c)
            assert abs(gap) <= budget

    def test_relu_form_within_budget_2d(self):
        def deriv(kv, x):
            # f(x) = e^{x1} cos(x2) / 3; every x1-derivative equals the function's x1 factor
            b = math.cos(x[1]) if kv[1] == 0 else -math.sin(x[1])
            return math.exp(x[0]) / 3 * b
        o = TaylorOracle(deriv, 2, 2)
        c = taylor_coefficients(o, 3)
        delta = 1e-3
        budget = relu_error_budget(o, 3, delta, c)
        for x in np.random.default_rng(1).uniform(size=(25, 2)):
            gap = taylor_partition_approx(o, 3, "relu_composed_h", x, delta, c) - taylor_partition_approx(o, 3, "exact_fN", x, coeffs=c)
            assert abs(gap) <= budget

    def test_capability_limits(self):
        o = TaylorOracle(lambda kv, x: 0.0, 3, 2)
        with pytest.raises(CapabilityError):
            taylor_partition_approx(o, 2, "exact_fN", np.zeros(3))
        with pytest.raises(CapabilityError):
            taylor_partition_approx(sin_oracle(), 9, "exact_fN", np.zeros(1))
