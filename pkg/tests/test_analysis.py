import numpy as np
import pytest

from conftest import piecewise_linear
from kinkfilter.analysis import (
    DEFAULT_GAMMA,
    contact_growth_rates,
    growth_rates,
    parametric_fit,
    r0_path,
    underreporting_diagnostic,
)
from kinkfilter.exceptions import InputError
from kinkfilter.sparse_hp import restricted_qp


class TestParametricFit:
    def test_constant(self):
        fit = parametric_fit(np.full(20, -1.3), 8)
        assert fit.alpha0 == pytest.approx(-1.3) and fit.alpha1 == pytest.approx(0.0, abs=1e-14)

    def test_exact_model(self):
        t = np.arange(30.0)
        y = 0.4 - 0.1 * np.maximum(t - 12, 0)
        fit = parametric_fit(y, 12)
        assert fit.alpha1 == pytest.approx(-0.1, abs=1e-12)
        assert np.max(np.abs(fit.residuals)) <= 1e-12

    def test_residuals_orthogonal(self, rng):
        y = rng.normal(size=40)
        fit = parametric_fit(y, 15)
        X = np.column_stack([np.ones(40), np.maximum(np.arange(40.0) - 15, 0)])
        assert np.max(np.abs(X.T @ fit.residuals)) <= 1e-9
        assert abs(fit.residuals.sum()) <= 1e-9

    @pytest.mark.parametrize("t0", [0, 19, 25])
    def test_out_of_range(self, rng, t0):
        with pytest.raises(InputError):
            parametric_fit(rng.normal(size=20), t0)


class TestR0:
    def test_threshold(self):
        np.testing.assert_allclose(r0_path(np.full(5, np.log(0.1)), 0.1), 1.0)

    def test_default_gamma(self):
        assert DEFAULT_GAMMA == pytest.approx(1 / 18)
        np.testing.assert_allclose(r0_path(np.zeros(4)), 18.0)

    def test_gamma_positive(self):
        with pytest.raises(InputError):
            r0_path(np.zeros(3), 0.0)


class TestGrowthRates:
    def test_flat(self):
        rep = contact_growth_rates(np.full(10, 2.0), ())
        assert len(rep.segments) == 1 and rep.segments[0].xi == 0.0

    def test_closed_form(self):
        b = -0.037
        rep = contact_growth_rates(0.5 + b * np.arange(12.0), ())
        assert rep.segments[0].xi == pytest.approx((np.exp(b) - 1) * 100, rel=1e-12)
        assert np.isnan(rep.xi[0])

    def test_segment_boundaries(self):
        f = piecewise_linear(20, [6, 13], [0.1, -0.05, 0.02])
        rep = contact_growth_rates(f, (6, 13))
        assert [(s.start, s.end) for s in rep.segments] == [(1, 6), (7, 13), (14, 19)]
        assert rep.segment_id[6] == 0 and rep.segment_id[7] == 1
        np.testing.assert_allclose([s.xi for s in rep.segments], np.expm1([0.1, -0.05, 0.02]) * 100)

    def test_piecewise_constant_on_restricted_fit(self, rng):
        y = rng.normal(size=50)
        m = restricted_qp(y, (9, 30, 41), 2.0)
        rep = contact_growth_rates(m.f, m.kinks)
        assert max(s.spread for s in rep.segments) <= 1e-9

    def test_gamma_cancels(self, rng):
        f = -1.0 + 0.05 * rng.normal(size=30).cumsum()
        xi_f = growth_rates(f)[1:]
        r0 = r0_path(f, 0.07)
        np.testing.assert_allclose(xi_f, (r0[1:] / r0[:-1] - 1) * 100, atol=1e-12, rtol=0)

    def test_table_rounding(self):
        rep = contact_growth_rates(0.01234 * np.arange(10.0), ())
        assert rep.table() == [(0, 1, 9, round(np.expm1(0.01234) * 100, 2))]


class TestUnderreporting:
    def test_rho_one(self, fixture_series):
        rep = underreporting_diagnostic(fixture_series, 1.0)
        assert rep.correction == 0.0 and rep.negligible

    def test_rho_032(self, fixture_series):
        rep = underreporting_diagnostic(fixture_series, 0.32)
        assert rep.correction == pytest.approx(-2.125)
        ratio = fixture_series.S_lag / fixture_series.C_lag
        assert (rep.ratio_max, rep.ratio_min) == (ratio.max(), ratio.min())
        assert rep.ratio_median == pytest.approx(np.median(ratio))
        assert rep.fraction_negligible == pytest.approx(np.mean(2.125 < 0.01 * ratio))

    @pytest.mark.parametrize("rho", [0.0, 1.5, -0.2])
    def test_rho_range(self, fixture_series, rho):
        with pytest.raises(InputError):
            underreporting_diagnostic(fixture_series, rho)
