import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esgtree.calibration import (
    CalibConfig,
    Cell,
    OptionQuote,
    PathDepModel,
    Status,
    Surface,
    bsm_surface,
    golden_section,
    implied_delta,
    implied_lambda,
    implied_sigma,
    implied_sigma_bsm,
    lambda_surface,
    model_price,
    multistart_minimize,
    objective,
    relative_change_surface,
    sigma_surface,
)
from esgtree.errors import DomainError
from esgtree.informed import InfoSpec, price_informed
from esgtree.lattice import LatticeSpec, bsm_call, price_european
from esgtree.pathdep import EtaCoeffs, simulate_driver
from esgtree.returns import ModelParams, blend_returns, estimate_params, normalize_esg

DT = 1 / 252
CFG = CalibConfig()


def family(seed=1, n=252):
    rng = np.random.default_rng(seed)
    r0 = 0.0005 + 0.014 * rng.standard_normal(n)
    e = np.where(np.arange(n) < 200, normalize_esg(88.0), normalize_esg(92.0))
    return {lam: estimate_params(blend_returns(r0, e, lam), DT) for lam in CFG.lambda_grid}


FAMILY = family()


def quote_from(price_fn, strike=100.0, steps=42, spot=100.0):
    return OptionQuote(strike, steps, price_fn(LatticeSpec(spot, strike, steps, DT, CFG.rf_annual)), spot)


class TestSearch:
    def test_golden_quadratic(self):
        x, fx = golden_section(lambda v: (v - 0.3) ** 2, 0.0, 1.0, 1e-8)
        assert x == pytest.approx(0.3, abs=1e-8)

    def test_golden_monotone_reaches_end(self):
        x, _ = golden_section(lambda v: v, 0.0, 1.0, 1e-6)
        assert x == 0.0

    def test_multistart_picks_global(self):
        f = lambda v: min((v - 1.5) ** 2 + 0.1, (v - 3.5) ** 2)  # noqa: E731
        fit = multistart_minimize(f, 0.0, 5.0, 1e-7, 5)
        assert fit.x == pytest.approx(3.5, abs=1e-6)
        assert fit.multimodal and fit.boundary is None

    def test_multistart_ties_go_left(self):
        f = lambda v: min((v - 1) ** 2, (v - 4) ** 2)  # noqa: E731
        assert multistart_minimize(f, 0.0, 5.0, 1e-7, 5).x == pytest.approx(1.0, abs=1e-6)

    def test_objective(self):
        assert objective(11.0, 10.0) == pytest.approx(0.01)
        with pytest.raises(DomainError):
            objective(1.0, 0.0)


class TestQuote:
    def test_validation(self):
        with pytest.raises(DomainError):
            OptionQuote(100, 10, 0.0, 100)
        with pytest.raises(DomainError):
            OptionQuote(100, 0, 1.0, 100)
        with pytest.raises(DomainError):
            OptionQuote(100, 10, 1.0, -1)

    def test_moneyness(self):
        q = OptionQuote(110, 10, 1.0, 100)
        assert q.moneyness == pytest.approx(1.1)
        assert q.key == (10, 1.1)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            CalibConfig(lambda_grid=(0.2, 0.1))
        with pytest.raises(DomainError):
            CalibConfig(sigma_domain=(1.0, 0.5))
        assert CalibConfig(dt=1 / 252).delta_domain[1] == pytest.approx(math.sqrt(252))


class TestLambda:
    def test_on_grid(self):
        q = quote_from(lambda s: price_european(s, FAMILY[0.37]).price)
        cell = implied_lambda(q, FAMILY, CFG)
        assert cell.value == 0.37 and cell.status is Status.CONVERGED

    def test_off_grid(self):
        # parameters interpolated halfway between two grid points
        a, b = FAMILY[0.37], FAMILY[0.38]
        mid = ModelParams((a.mu + b.mu) / 2, (a.sigma + b.sigma) / 2, a.p)
        q = quote_from(lambda s: price_european(s, mid).price)
        assert implied_lambda(q, FAMILY, CFG).value in (0.37, 0.38)

    def test_exhaustive(self):
        q = quote_from(lambda s: price_european(s, FAMILY[0.6]).price * 1.01, strike=105)
        cell = implied_lambda(q, FAMILY, CFG)
        spec = CFG.spec_for(q)
        residuals = [objective(price_european(spec, FAMILY[lam]).price, q.mid_price) for lam in CFG.lambda_grid]
        assert cell.residual == min(residuals)
        assert cell.value == CFG.lambda_grid[int(np.argmin(residuals))]

    def test_ties_smallest(self):
        same = {lam: FAMILY[0.5] for lam in CFG.lambda_grid}
        q = quote_from(lambda s: price_european(s, FAMILY[0.5]).price)
        assert implied_lambda(q, same, CFG).value == 0.0

    def test_empty(self):
        q = OptionQuote(100, 10, 1.0, 100)
        assert implied_lambda(q, {}, CFG).status is Status.EMPTY

    def test_pathdep_surface_matches_direct(self):
        d = simulate_driver(80, 0.5, seed=3)
        models = {lam: PathDepModel(0.05, EtaCoeffs(0.2 + 0.1 * lam, 0.1, -0.05), d) for lam in (0.0, 0.5, 1.0)}
        cfg = CalibConfig(lambda_grid=(0.0, 0.5, 1.0))
        quotes = [quote_from(lambda s: models[0.5].price(s), strike=k, steps=t)
                  for k in (95.0, 105.0) for t in (10, 60)]
        surf = lambda_surface(quotes, models, cfg)
        assert all(c.value == 0.5 for c in surf.rows())
        for q in quotes:
            assert implied_lambda(q, models, cfg).value == 0.5

    def test_model_price_dispatch(self):
        with pytest.raises(DomainError):
            model_price(object(), LatticeSpec(1, 1, 1))


class TestSigma:
    def test_round_trip(self):
        base = FAMILY[0.0]
        q = quote_from(lambda s: price_european(s, base.replace(sigma=0.25)).price, strike=103)
        cell = implied_sigma(q, base, CFG)
        assert cell.value == pytest.approx(0.25, abs=1e-4)
        assert cell.status is Status.CONVERGED

    def test_bsm_round_trip(self):
        q = OptionQuote(100, 252, bsm_call(100, 100, 0.05, 0.2, 1.0), 100)
        cell = implied_sigma_bsm(q, CalibConfig(rf_annual=0.05))
        assert cell.value == pytest.approx(0.2, abs=1e-6)

    def test_intrinsic_goes_to_lower_bound(self):
        q = OptionQuote(80, 21, 100 - 80 * math.exp(-0.05 * 21 / 252), 100)
        cell = implied_sigma_bsm(q, CalibConfig(rf_annual=0.05))
        assert cell.status is Status.BOUNDARY and "lower_bound" in cell.flags

    def test_above_spot_is_boundary(self):
        cell = implied_sigma_bsm(OptionQuote(100, 21, 120.0, 100), CFG)
        assert cell.status is Status.BOUNDARY

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.1, 0.8), st.floats(0.85, 1.15), st.integers(21, 126))
    def test_recovered_sigma_reprices(self, sigma, m, steps):
        q = OptionQuote(100 * m, steps, bsm_call(100, 100 * m, CFG.rf_annual, sigma, steps * DT), 100)
        cell = implied_sigma_bsm(q, CFG)
        repriced = bsm_call(100, 100 * m, CFG.rf_annual, cell.value, steps * DT)
        assert abs(repriced / q.mid_price - 1) <= 1e-5


class TestDelta:
    params = ModelParams(0.2, 0.3, 0.5)

    def test_round_trip(self):
        q = quote_from(lambda s: price_informed(s, self.params, InfoSpec(3.0)).price)
        cell = implied_delta(q, self.params, CFG)
        assert cell.value == pytest.approx(3.0, abs=1e-3)

    def test_uninformed_quote(self):
        q = quote_from(lambda s: price_european(s, self.params).price)
        cell = implied_delta(q, self.params, CFG)
        assert cell.value < 1e-2 and cell.status is Status.CONVERGED

    def test_singular_theta(self):
        params = ModelParams(CFG.rf_annual, 0.3, 0.5)
        cell = implied_delta(OptionQuote(100, 42, 5.0, 100), params, CFG)
        assert cell.status is Status.SINGULAR and cell.value == 0.0

    def test_upper_bound(self):
        cfg = CalibConfig(delta_domain=(0.0, 1.0))
        q = quote_from(lambda s: price_informed(s, self.params, InfoSpec(3.0)).price)
        cell = implied_delta(q, self.params, cfg)
        assert cell.status is Status.BOUNDARY and "upper_bound" in cell.flags


class TestSurfaces:
    quotes = [quote_from(lambda s: bsm_call(s.s0, s.strike, CFG.rf_annual, 0.2, s.maturity), strike=k, steps=t)
              for k in (90.0, 100.0, 110.0) for t in (21, 63)]

    def test_bsm_flat(self):
        surf = bsm_surface(self.quotes, CFG)
        assert all(abs(c.value - 0.2) <= 1e-6 for c in surf.rows())
        assert surf.status_counts()["converged"] == 6

    def test_workers_match_serial(self):
        base = FAMILY[0.0]
        serial = sigma_surface(self.quotes, base, CFG)
        pooled = sigma_surface(self.quotes, base, CFG, workers=2)
        assert serial == pooled

    def test_order_independent(self):
        a = bsm_surface(self.quotes, CFG)
        b = bsm_surface(self.quotes[::-1], CFG)
        assert a.rows() == b.rows()

    def test_duplicates_rejected(self):
        with pytest.raises(DomainError):
            bsm_surface(self.quotes + self.quotes[:1], CFG)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            bsm_surface([], CFG)


class TestRelativeChange:
    def surface(self, values):
        return Surface("s", {(t, 1.0): Cell(t, 1.0, v, 0.0, Status.CONVERGED) for t, v in values.items()})

    def test_identity_and_scaling(self):
        b = self.surface({21: 0.2, 42: 0.3})
        assert all(c.value == 0 for c in relative_change_surface(b, b).rows())
        a = self.surface({21: 0.21, 42: 0.315})
        np.testing.assert_allclose([c.value for c in relative_change_surface(a, b).rows()], [5.0, 5.0])

    def test_missing_and_zero_cells(self):
        a = self.surface({21: 0.2, 42: 0.3, 63: 0.1})
        b = self.surface({21: 0.0, 42: 0.3})
        out = relative_change_surface(a, b, kind="diff")
        assert list(out.cells) == [(42, 1.0)]
        assert len(out.notes) == 1 and out.kind == "diff"
