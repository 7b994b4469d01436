from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as hst

from lookahead import analytics as an
from lookahead.errors import DomainError

from . import oracles

probs = hst.floats(min_value=0.01, max_value=0.99)
ks = hst.integers(min_value=1, max_value=40)


class TestTokenSpeedup:
    def test_gamma_one_is_baseline(self):
        assert an.token_speedup_g(0.8, 0.05, 1) == pytest.approx(1.0, abs=1e-15)

    def test_free_draft_closed_form(self):
        assert an.token_speedup_g(0.8, 0.0, 5) == pytest.approx((1 - 0.8**5) / 0.2, rel=1e-14)

    def test_background_convention(self):
        expected = (1 - 0.7**4) / (0.3 * (1 + 0.1 * 3))
        assert an.token_speedup_g(0.7, 0.1, 3, an.GConvention.BACKGROUND) == pytest.approx(expected, rel=1e-14)
        assert an.token_speedup_g(0.7, 0.1, 0, "background") == pytest.approx(1.0)

    @given(probs, hst.floats(min_value=0.0, max_value=0.99), hst.integers(0, 60))
    def test_conventions_differ_by_index_shift(self, alpha, c, gamma):
        bg = an.token_speedup_g(alpha, c, gamma, an.GConvention.BACKGROUND)
        app = an.token_speedup_g(alpha, c, gamma + 1, an.GConvention.APPENDIX)
        assert bg == pytest.approx(app, rel=1e-12)

    @given(probs, hst.floats(min_value=0.0, max_value=0.99), hst.integers(1, 200))
    def test_bounded_by_inverse_rejection(self, alpha, c, gamma):
        # Strict in exact arithmetic; with c = 0 and alpha^gamma below eps the two round equal.
        assert 0 < an.token_speedup_g(alpha, c, gamma) <= 1 / (1 - alpha)
        if c > 1e-6:
            assert an.token_speedup_g(alpha, c, gamma) < 1 / (1 - alpha)

    def test_domain(self):
        with pytest.raises(DomainError, match="alpha2"):
            an.token_speedup_g(1.0, 0.1, 2)
        with pytest.raises(DomainError, match="gamma2"):
            an.token_speedup_g(0.5, 0.1, 0)

    def test_unimodal_scan(self):
        for alpha in np.arange(0.05, 0.96, 0.05):
            for c in np.arange(0.01, 0.5, 0.02):
                if alpha <= c:
                    continue
                star = an.token_optimum_gamma(alpha, c)
                g = np.array([an.token_speedup_g(alpha, c, k) for k in range(1, an.DEFAULT_GAMMA_MAX + 1)])
                assert np.all(np.diff(g[:star]) >= 0)
                assert np.all(np.diff(g[star - 1 :]) <= 0)

    def test_optimum_gamma(self):
        scan = [an.token_speedup_g(0.8, 0.05, k) for k in range(1, 65)]
        assert an.token_optimum_gamma(0.8, 0.05) == 1 + int(np.argmax(scan)) == 9
        assert an.token_optimum_gamma(0.52, 0.2) >= 2
        with pytest.raises(DomainError):
            an.token_optimum_gamma(0.2, 0.2)

    @given(hst.floats(0.05, 0.95), hst.floats(0.01, 0.9))
    def test_optimum_is_local_max(self, alpha, c):
        if alpha <= c:
            return
        star = an.token_optimum_gamma(alpha, c)
        assert star >= 2
        g = lambda k: an.token_speedup_g(alpha, c, k)  # noqa: E731
        assert g(star) >= g(star - 1)
        if star < an.DEFAULT_GAMMA_MAX:
            assert g(star) >= g(star + 1)

    def test_precision_near_one(self):
        # 1 - alpha^gamma for alpha close to 1 keeps full relative precision.
        alpha = 1 - 1e-12
        value = an.token_speedup_g(alpha, 0.0, 3)
        assert value == pytest.approx(3.0, rel=1e-11)


class TestStepSpeedupSync:
    def test_k1_is_baseline(self):
        assert an.step_speedup_sync(0.6, 0.2, 1) == pytest.approx(1.0)

    def test_exact_rational_oracle(self):
        for alpha, c, k in [("0.6", "0.2", 3), ("0.3", "0.05", 8), ("0.8", "0.2", 5)]:
            exact = oracles.sync_speedup_fraction(Fraction(alpha), Fraction(c), k)
            assert an.step_speedup_sync(float(alpha), float(c), k) == pytest.approx(float(exact), rel=1e-13)

    def test_small_alpha_limit(self):
        for c, k in [(0.2, 3), (0.05, 8)]:
            value = an.step_speedup_sync(1e-12, c, k)
            assert value == pytest.approx(1 / (1 - c + c * k), rel=1e-9)
            assert value >= 1 / (1 - c + c * k)

    @given(probs, probs, ks)
    def test_same_formula_as_token_g(self, alpha, c, k):
        assert an.step_speedup_sync(alpha, c, k) == an.token_speedup_g(alpha, c, k)

    @given(probs, probs, hst.integers(1, 12))
    def test_pmf_enumeration(self, alpha, c, k):
        assert an.step_speedup_sync(alpha, c, k) == pytest.approx(oracles.sync_speedup_enum(alpha, c, k), rel=1e-10)


class TestStepSpeedupAsync:
    def test_k1_is_baseline(self):
        assert an.step_speedup_async(0.6, 0.2, 1) == pytest.approx(1.0, abs=1e-15)

    def test_saturation_at_inverse_cost(self):
        s1 = an.async_saturated_speedup(0.6, 0.2)
        assert s1 == pytest.approx(1 / (0.2 + 0.8 * 0.4))
        assert an.step_speedup_async(0.6, 0.2, 5) == s1
        assert an.async_depth_limited_speedup(0.6, 0.2, 5) == pytest.approx(s1, rel=1e-12)

    @given(probs, hst.integers(2, 20))
    def test_boundary_identity(self, alpha, inv):
        c = 1.0 / inv
        assert an.async_depth_limited_speedup(alpha, c, inv) == pytest.approx(
            an.async_saturated_speedup(alpha, c), rel=1e-12
        )

    def test_ceil_inverse_snaps(self):
        assert an.ceil_inverse(0.2) == 5
        assert an.ceil_inverse(1 / 3) == 3
        assert an.ceil_inverse(0.3) == 4

    @given(probs, hst.floats(0.02, 0.99), hst.integers(1, 30))
    def test_pmf_enumeration(self, alpha, c, k):
        sat = k >= an.ceil_inverse(c)
        expected = oracles.async_speedup_enum(alpha, c, k, sat)
        assert an.step_speedup_async(alpha, c, k) == pytest.approx(expected, rel=1e-9)

    def test_monotone_then_flat(self):
        for alpha in np.arange(0.05, 0.96, 0.05):
            for c in np.arange(0.02, 0.99, 0.03):
                cap = an.ceil_inverse(c)
                f = [an.step_speedup_async(alpha, c, k) for k in range(1, cap + 4)]
                for k in range(1, cap):
                    step = f[k] - f[k - 1]
                    # The increment scales like alpha^k; below ~1e-10 it drowns in rounding.
                    if alpha**k > 1e-10:
                        assert step > 0, (alpha, c, k)
                    else:
                        assert step > -4 * np.spacing(f[k - 1]), (alpha, c, k)
                assert all(v == f[cap - 1] for v in f[cap - 1 :])

    def test_dispatch(self):
        assert an.step_speedup(0.6, 0.2, 3, an.Mode.SYNC) == an.step_speedup_sync(0.6, 0.2, 3)
        assert an.step_speedup(0.6, 0.2, 3, "async") == an.step_speedup_async(0.6, 0.2, 3)


class TestCombined:
    P = an.SpecParams(0.6, 0.7, 0.2, 0.1)

    def test_trivial(self):
        assert an.combined_speedup_h(self.P, 1, 1, an.Mode.SYNC) == pytest.approx(1.0)

    def test_product(self):
        expected = an.step_speedup_sync(0.6, 0.2, 2) * an.token_speedup_g(0.7, 0.1, 4)
        assert an.combined_speedup_h(self.P, 2, 4, an.Mode.SYNC) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("mode", list(an.Mode))
    def test_token_only(self, mode):
        for n in range(1, 10):
            assert an.combined_speedup_h(self.P, 1, n, mode) == pytest.approx(an.token_speedup_g(0.7, 0.1, n))

    def test_params_validated(self):
        with pytest.raises(DomainError, match="c2"):
            an.SpecParams(0.6, 0.7, 0.2, 0.0)


class TestParallelDim:
    def test_cases(self):
        assert an.parallel_dim_f(0.2, 3, an.Mode.SYNC) == 3
        assert an.parallel_dim_f(0.2, 9, an.Mode.ASYNC) == 5
        assert an.parallel_dim_f(0.3, 2, an.Mode.ASYNC) == 2


class TestOptimalAllocation:
    def _oracle(self, params, M, mode):
        mode = an.Mode(mode)
        k1_max = M if mode is an.Mode.SYNC else max(M, math.ceil(1 / params.c1 - 1e-9))

        def dim(k1):
            return k1 if mode is an.Mode.SYNC else min(math.ceil(1 / params.c1 - 1e-9), k1)

        return oracles.brute_force_allocation(
            lambda a, b: an.combined_speedup_h(params, a, b, mode), dim, M, k1_max
        )

    def test_budget_one(self):
        r = an.optimal_allocation(an.SpecParams(0.6, 0.7, 0.2, 0.1), 1, an.Mode.ASYNC)
        assert (r.k1, r.k2, r.speedup) == (1, 1, 1.0)

    def test_hybrid_example(self):
        r = an.optimal_allocation(an.SpecParams(0.7, 0.7, 0.2, 0.1), 16, an.Mode.ASYNC)
        assert r.k1 >= 2 and r.k2 >= 2
        (k1, k2), h = self._oracle(an.SpecParams(0.7, 0.7, 0.2, 0.1), 16, "async")
        assert (r.k1, r.k2) == (k1, k2)

    def test_low_alpha_sync(self):
        p = an.SpecParams(0.01, 0.7, 0.3, 0.05)
        r = an.optimal_allocation(p, 8, an.Mode.SYNC)
        (k1, k2), h = self._oracle(p, 8, "sync")
        assert (r.k1, r.k2) == (k1, k2)
        assert r.k1 == 1
        assert r.speedup == pytest.approx(h)

    @settings(max_examples=60, deadline=None)
    @given(probs, probs, probs, probs, hst.integers(1, 24), hst.sampled_from(list(an.Mode)))
    def test_matches_brute_force(self, a1, a2, c1, c2, M, mode):
        p = an.SpecParams(a1, a2, c1, c2)
        r = an.optimal_allocation(p, M, mode)
        (k1, k2), h = self._oracle(p, M, mode)
        assert r.speedup == pytest.approx(h, rel=1e-12)
        assert r.parallel_dim_f * r.parallel_dim_g <= M
        assert r.parallel_dim_g == r.k2
        assert r.parallel_dim_f == an.parallel_dim_f(c1, r.k1, mode)

    def test_domain(self):
        with pytest.raises(DomainError, match="M"):
            an.optimal_allocation(an.SpecParams(0.6, 0.7, 0.2, 0.1), 0, an.Mode.SYNC)


class TestSyncHybridConditions:
    def test_step_condition_example(self):
        # (1 + a1)/(1 + c1) = 1.333...; token side halving ratio at M = 16 is 1.0168 / 1.5 * 1.7 ~ 1.152.
        r = an.hybrid_conditions_sync(an.SpecParams(0.6, 0.6, 0.2, 0.1), 16)
        lhs = 1.6 / 1.2
        rhs = (1 + 0.6**8) * (0.9 + 0.8) / (0.9 + 1.6)
        assert lhs >= rhs
        assert r.eq_step_level_holds

    @given(probs, probs, hst.integers(2, 40))
    def test_symmetric_params(self, alpha, c, half):
        r = an.hybrid_conditions_sync(an.SpecParams(alpha, alpha, c, c), 2 * half)
        assert r.eq_step_level_holds == r.eq_token_level_holds

    def test_preconditions(self):
        with pytest.raises(DomainError):
            an.hybrid_conditions_sync(an.SpecParams(0.6, 0.6, 0.2, 0.1), 7)
        with pytest.raises(DomainError):
            an.hybrid_conditions_sync(an.SpecParams(0.6, 0.6, 0.2, 0.1), 2)
        r = an.hybrid_conditions_sync(an.SpecParams(0.1, 0.1, 0.5, 0.5), 8)
        assert not r.preconditions_met and r.predicted_regime is an.Regime.INDETERMINATE
        assert an.indeterminate_report().predicted_regime is an.Regime.INDETERMINATE


class TestShapeFunctions:
    @pytest.mark.parametrize("x,expected", [(10, 0.26842), (8, 0.35988), (6, 0.47567)])
    def test_a_values(self, x, expected):
        assert an.log_derivative_a(0.8, x) == pytest.approx(expected, abs=5e-5)

    @given(hst.floats(0.05, 0.95), hst.floats(1.0, 60.0))
    def test_a_is_scaled_log_derivative(self, alpha, x):
        h = 1e-6 * x
        ln = lambda t: math.log1p(-(alpha**t))  # noqa: E731
        numeric = x * (ln(x + h) - ln(x - h)) / (2 * h) if x - h >= 1 else x * (ln(x + h) - ln(x)) / h
        assert an.log_derivative_a(alpha, x) == pytest.approx(numeric, rel=1e-4)

    def test_a_monotonicity(self):
        alphas = np.linspace(0.5, 0.8, 31)[1:-1]
        xs = np.linspace(1, 64, 253)
        grid = np.array([[an.log_derivative_a(a, x) for x in xs] for a in alphas])
        assert np.all(np.diff(grid, axis=1) < 0)
        assert np.all(np.diff(grid, axis=0) > 0)

    def test_a_domain(self):
        with pytest.raises(DomainError):
            an.log_derivative_a(0.8, 0.5)

    def test_F_series_near_zero(self):
        y = sympy.symbols("y", positive=True)
        F = 2 - y + (y - 2 + 1 / y) * sympy.log(1 - y)
        series = sympy.series(F, y, 0, 4).removeO()
        assert sympy.limit(F, y, 0) == 1
        for value in (1e-4, 1e-3, 1e-2):
            assert an.mild_constraint_F(value) == pytest.approx(float(series.subs(y, value)), abs=1e-9)
        assert an.mild_constraint_F(1e-4) == pytest.approx(1.0, abs=1e-4)

    def test_F_maximum(self):
        ys = np.linspace(1e-4, 1 - 1e-4, 100_000)
        vals = np.array([an.mild_constraint_F(v) for v in ys])
        i = int(np.argmax(vals))
        assert vals[i] == pytest.approx(1.1562281731, abs=1e-6)
        assert ys[i] == pytest.approx(0.5693971022, abs=1e-3)
        assert vals.max() < an.MILD_CONSTRAINT_BOUND

    def test_F_domain(self):
        for y in (0.0, 1.0):
            with pytest.raises(DomainError):
                an.mild_constraint_F(y)


class TestExpectations:
    def test_values(self):
        assert an.expected_accept_run(0.5) == pytest.approx(1.0)
        assert an.expected_accept_run(0.75) == pytest.approx(3.0)
        assert an.expected_ceil_term(0.5, 1) == pytest.approx(2.0)
        assert an.expected_ceil_term(0.5, 2) == pytest.approx(4 / 3, abs=1e-12)
        assert an.expected_mod_term(0.6, 1) == 0.0
        assert an.expected_mod_term(0.5, 2) == pytest.approx(1 / 3, abs=1e-12)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.75])
    @pytest.mark.parametrize("gamma", [1, 2, 3, 4, 8])
    def test_truncated_enumeration(self, alpha, gamma):
        # Tail mass beyond k = 200 is below 1e-24 for these alphas.
        assert an.expected_accept_run(alpha) == pytest.approx(
            oracles.enumerate_expectation(alpha, lambda k: k), abs=1e-12
        )
        assert an.expected_ceil_term(alpha, gamma) == pytest.approx(
            oracles.enumerate_expectation(alpha, lambda k: -(-(k + 1) // gamma)), abs=1e-12
        )
        assert an.expected_mod_term(alpha, gamma) == pytest.approx(
            oracles.enumerate_expectation(alpha, lambda k: k % gamma), abs=1e-12
        )

    @given(hst.floats(0.01, 0.97), hst.sampled_from([1, 2, 4, 5, 8, 10]))
    def test_renewal_enumeration(self, alpha, gamma):
        assert an.expected_mod_term(alpha, gamma) == pytest.approx(
            oracles.renewal_expectation(alpha, lambda k: k % gamma, 0.0), rel=1e-9, abs=1e-12
        )
        assert an.expected_ceil_term(alpha, gamma) == pytest.approx(
            oracles.renewal_expectation(alpha, lambda k: -(-(k + 1) // gamma), oracles.ENUM_K / gamma),
            rel=1e-9,
        )
