import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esgtree.errors import ComplexVolatilityError, DomainError, SingularityError
from esgtree.informed import (
    InfoSpec,
    cubic_real_roots,
    informed_dividend_yield,
    informed_moves,
    informed_moves_arith,
    informed_moves_log,
    informed_params,
    informed_sharpe_arith,
    informed_sharpe_log,
    n_delta_arith,
    n_e_log,
    optimal_n_arith,
    optimal_n_log,
    price_informed,
    simulate_informed_strategy,
    strategy_branches,
)
from esgtree.lattice import LatticeSpec, arith_moves, log_moves, moves_arithmetic, moves_log, price_european
from esgtree.returns import ModelParams

DT = 1 / 252


class TestInfoSpec:
    def test_bounds(self):
        InfoSpec(15.0).check(DT)
        with pytest.raises(DomainError):
            InfoSpec(16.0).check(DT)
        with pytest.raises(DomainError):
            InfoSpec(-0.1)

    @given(st.floats(0.01, 15.8))
    def test_p_correct(self, delta):
        p = InfoSpec(delta).p_correct(DT)
        assert 0.5 < p < 1
        assert p == pytest.approx((1 + delta * math.sqrt(DT)) / 2)


class TestArithmetic:
    def test_n_delta_examples(self):
        assert n_delta_arith(0, 0.3) == 0
        assert n_delta_arith(1, 0.5) == 1
        assert n_delta_arith(5, 0.6) == pytest.approx(4.898979, abs=1e-6)

    def test_optimal_examples(self):
        assert optimal_n_arith(0.0, 0.5) == 0
        assert optimal_n_arith(2.0, 0.5) == 4
        with pytest.raises(SingularityError):
            optimal_n_arith(1.0, 1e-10)

    @given(st.floats(0.05, 3), st.floats(0.01, 5))
    def test_optimal_sharpe(self, theta, nd):
        n = optimal_n_arith(nd, theta)
        best = informed_sharpe_arith(theta, nd, n)
        assert best == pytest.approx(math.hypot(theta, nd), rel=1e-12)
        assert best >= abs(theta)
        for h in (1e-4, 1e-2):
            assert informed_sharpe_arith(theta, nd, n + h) <= best + 1e-15
            assert informed_sharpe_arith(theta, nd, n - h) <= best + 1e-15

    def test_negative_theta_stationary_point_is_a_minimum(self):
        theta, nd = -0.5, 1.0
        n = optimal_n_arith(nd, theta)
        centre = informed_sharpe_arith(theta, nd, n)
        assert informed_sharpe_arith(theta, nd, n + 0.01) > centre

    def test_zero_delta_reduces(self):
        params = ModelParams(0.1, 0.2, 0.55)
        assert informed_moves_arith(params, InfoSpec(0.0), 0.02, DT) == moves_arithmetic(params, DT, 0.02)

    @given(st.floats(0.05, 0.5), st.floats(0.1, 0.5), st.floats(0.2, 0.8), st.floats(0.1, 10))
    def test_effective_sharpe(self, mu, sigma, p, delta):
        rf = 0.02
        params = ModelParams(rf + mu, sigma, p)
        m = informed_moves_arith(params, InfoSpec(delta), rf, DT)
        mean = p * m.u + (1 - p) * m.d
        sd = math.sqrt(p * (1 - p)) * (m.u - m.d)
        theta = mu / sigma
        nd = n_delta_arith(delta, p)
        assert (mean / DT - rf) / (sd / math.sqrt(DT)) == pytest.approx(math.hypot(theta, nd), rel=1e-9)

    def test_dividend_yield(self):
        params = ModelParams(0.12, 0.2, 0.5)
        rf = 0.02
        assert informed_dividend_yield(params, InfoSpec(0.0), rf) == 0.0
        theta, nd = 0.5, n_delta_arith(2.0, 0.5)
        assert informed_dividend_yield(params, InfoSpec(2.0), rf) == pytest.approx(0.2 * (math.hypot(theta, nd) - theta))
        yields = [informed_dividend_yield(params, InfoSpec(d), rf) for d in np.linspace(0, 15, 30)]
        assert np.all(np.diff(yields) > 0)

    def test_singular_theta(self):
        with pytest.raises(SingularityError):
            informed_moves_arith(ModelParams(0.02, 0.2, 0.5), InfoSpec(1.0), 0.02, DT)

    def test_params_fields(self):
        ip = informed_params(ModelParams(0.12, 0.2, 0.5), InfoSpec(1.0), 0.02)
        assert ip.n_max == pytest.approx(2.0)
        assert ip.sigma2 == pytest.approx(0.2 * math.sqrt(5))
        assert ip.drift == pytest.approx(0.12 + 0.2 * 1.0 * 2.0)


class TestLog:
    def test_examples(self):
        assert optimal_n_log(0.0, 1.0) == 0.0
        assert optimal_n_log(1.0, 1.0) == pytest.approx(0.596072, abs=1e-6)

    def test_bisection_example(self):
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if mid**3 + 3 * mid - 2 < 0 else (lo, mid)
        assert abs(optimal_n_log(1.0, 1.0) - lo) <= 1e-10

    @settings(max_examples=300)
    @given(st.floats(-8, 8), st.floats(-20, 10))
    def test_roots_and_argmax(self, n_e, a):
        roots = cubic_real_roots(n_e, a)
        for r in roots:
            assert abs(r**3 + (2 + a) * r - 2 * n_e) <= 1e-10 * max(1.0, abs(r) ** 3)
        best = optimal_n_log(n_e, a)
        value = informed_sharpe_log(1.0, a, n_e, best)
        for r in roots:
            assert informed_sharpe_log(1.0, a, n_e, r) <= value + 1e-12

    def test_three_roots_case(self):
        roots = cubic_real_roots(0.5, -8.0)
        assert len(roots) == 3
        np.testing.assert_allclose(sorted(roots), sorted(np.roots([1, 0, -6, -1]).real), atol=1e-12)

    def test_zero_delta_reduces(self):
        params = ModelParams(0.12, 0.25, 0.45, "log")
        assert informed_moves_log(params, InfoSpec(0.0), 0.02, DT) == moves_log(params, DT, 0.02)
        ip = informed_params(params, InfoSpec(0.0), 0.02)
        assert ip.n_max == 0 and ip.sigma1 == ip.sigma2 == params.sigma

    @given(st.floats(0.05, 0.4), st.floats(0.1, 0.5), st.floats(0.2, 0.8), st.floats(0.0, 10))
    def test_sigma2_at_least_sigma(self, excess, sigma, p, delta):
        params = ModelParams(0.02 + excess, sigma, p, "log")
        try:
            ip = informed_params(params, InfoSpec(delta), 0.02)
        except ComplexVolatilityError:
            return
        assert ip.sigma2 >= sigma

    def test_moments(self):
        params = ModelParams(0.15, 0.25, 0.5, "log")
        ip = informed_params(params, InfoSpec(0.2), 0.02)
        m = informed_moves_log(params, InfoSpec(0.2), 0.02, DT)
        assert 0.5 * (m.u + m.d) == pytest.approx((0.15 - ip.sigma1**2 / 2) * DT, rel=1e-12)
        assert 0.25 * (m.u - m.d) ** 2 == pytest.approx(ip.sigma2**2 * DT, rel=1e-12)

    def test_complex_volatility_flagged(self):
        # large N_E with a small premium makes 1 + N^2 - 2 N_E N negative
        params = ModelParams(0.03, 0.05, 0.5, "log")
        with pytest.raises(ComplexVolatilityError):
            informed_params(params, InfoSpec(10.0), 0.02)

    def test_dividend_at_zero_delta(self):
        params = ModelParams(0.12, 0.25, 0.5, "log")
        assert informed_dividend_yield(params, InfoSpec(0.0), 0.02) == pytest.approx(-0.25**2 / 2)

    def test_n_e(self):
        assert n_e_log(1.0, 0.5, 0.2) == pytest.approx(5.0)
        with pytest.raises(DomainError):
            n_e_log(1.0, 0.5, 0.0)

    def test_wrong_convention(self):
        with pytest.raises(DomainError):
            informed_moves_log(ModelParams(0.1, 0.2, 0.5), InfoSpec(1.0), 0.0, DT)
        with pytest.raises(DomainError):
            informed_moves_arith(ModelParams(0.1, 0.2, 0.5, "log"), InfoSpec(1.0), 0.0, DT)


class TestPricing:
    @pytest.mark.parametrize("convention", ["arith", "log"])
    def test_zero_delta_matches_plain_tree(self, convention):
        params = ModelParams(0.12, 0.25, 0.5, convention)
        spec = LatticeSpec(100, 100, 63, DT, 0.02)
        assert price_informed(spec, params, InfoSpec(0.0)).price == price_european(spec, params).price

    def test_information_raises_call_value(self):
        params = ModelParams(0.12, 0.25, 0.5)
        spec = LatticeSpec(100, 100, 63, DT, 0.02)
        prices = [price_informed(spec, params, InfoSpec(d)).price for d in (0.0, 1.0, 3.0)]
        assert prices[0] < prices[1] < prices[2]

    def test_moves_dispatch(self):
        p = ModelParams(0.12, 0.25, 0.5, "log")
        assert informed_moves(p, InfoSpec(0.2), 0.02, DT) == informed_moves_log(p, InfoSpec(0.2), 0.02, DT)


class TestStrategy:
    @given(st.floats(0.01, 0.99), st.floats(0.5, 0.99))
    def test_branch_probabilities(self, p, pc):
        _, probs = strategy_branches(arith_moves(0.1, 0.2, p, DT, 0.0), pc, 1.0, 0.0, DT, "arith")
        assert probs.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(probs >= 0)

    def test_no_contracts_is_plain_tree(self):
        params = ModelParams(0.1, 0.2, 0.6)
        spec = LatticeSpec(100, 100, 1, DT, 0.02)
        m = simulate_informed_strategy(spec, params, InfoSpec(2.0), 0.0, 200_000, seed=1)
        moves = arith_moves(0.1, 0.2, 0.6, DT, 0.02)
        assert abs(m.mean - 0.1 * DT) <= 3 * m.mean_se
        assert abs(m.var - 0.04 * DT) <= 3 * m.var_se
        rets, _ = strategy_branches(moves, 0.7, 0.0, 0.02, DT, "arith")
        np.testing.assert_array_equal(rets, [moves.u, moves.d, moves.u, moves.d])

    def test_exact_mean_at_half(self):
        params = ModelParams(0.1, 0.2, 0.5)
        delta, n = 3.0, 1.5
        moves = arith_moves(0.1, 0.2, 0.5, DT, 0.02)
        rets, probs = strategy_branches(moves, InfoSpec(delta).p_correct(DT), n, 0.02, DT, "arith")
        assert probs @ rets == pytest.approx((0.1 + 0.2 * delta * n) * DT, rel=1e-12)
        assert params.p == 0.5

    def test_variance_gap_vanishes_with_dt(self):
        # at p = 1/2 and rf = 0 the four-branch variance differs from sigma^2 (1 + N^2) dt
        # by N dt^2 (N mu^2 + 2 mu delta sigma - N delta^2 sigma^2)
        mu, sigma, delta, n = 0.1, 0.2, 3.0, 1.5
        gaps = []
        for dt in (1 / 52, 1 / 252, 1 / 1260):
            moves = arith_moves(mu, sigma, 0.5, dt, 0.0)
            rets, probs = strategy_branches(moves, InfoSpec(delta).p_correct(dt), n, 0.0, dt, "arith")
            mean = probs @ rets
            exact = probs @ (rets - mean) ** 2
            target = sigma**2 * (1 + n * n) * dt
            gaps.append((exact - target) / target)
            assert exact - target == pytest.approx(n * dt**2 * (n * mu**2 + 2 * mu * delta * sigma - n * (delta * sigma) ** 2), rel=1e-6)
        assert abs(gaps[0]) > abs(gaps[1]) > abs(gaps[2])

    def test_log_branches(self):
        moves = log_moves(0.1, 0.2, 0.2, 0.5, DT, 0.0)
        rets, _ = strategy_branches(moves, 0.6, 0.0, 0.0, DT, "log")
        np.testing.assert_allclose(rets, [moves.u, moves.d, moves.u, moves.d])

    def test_deterministic_seed(self):
        params = ModelParams(0.1, 0.2, 0.5)
        spec = LatticeSpec(100, 100, 1, DT, 0.02)
        a = simulate_informed_strategy(spec, params, InfoSpec(1.0), 1.0, 1000, seed=3)
        b = simulate_informed_strategy(spec, params, InfoSpec(1.0), 1.0, 1000, seed=3)
        assert a == b

    def test_bad_paths(self):
        with pytest.raises(DomainError):
            simulate_informed_strategy(LatticeSpec(1, 1, 1), ModelParams(0.1, 0.2, 0.5), InfoSpec(1.0), 1.0, 0, 1)
