"""GARCH likelihood/fit/forecast, EWMA and historical VaR against oracles."""

import math

import numpy as np
import pytest

from risklabs.classical import (
    GarchParams,
    GarchState,
    NumericError,
    ewma_vol,
    garch_fit,
    garch_forecast,
    garch_horizon_log_vol,
    garch_loglik,
    garch_variance_series,
    historical_var,
)
from risklabs.data import SynthConfig, synth_generate


def hand_variance_recursion(params, returns):
    """Independent per-step recursion used as the oracle."""
    sigma2 = [float(np.var(returns, ddof=1))]
    for t in range(1, len(returns)):
        sigma2.append(
            params.omega
            + params.alpha * returns[t - 1] ** 2
            + params.beta * sigma2[-1]
        )
    return np.array(sigma2)


def hand_loglik(params, returns):
    sigma2 = hand_variance_recursion(params, returns)
    return float(
        -0.5
        * np.sum(np.log(2 * np.pi) + np.log(sigma2) + np.asarray(returns) ** 2 / sigma2)
    )


class TestGarchParams:
    def test_stationarity_enforced(self):
        with pytest.raises(ValueError, match="alpha \\+ beta"):
            GarchParams(omega=0.1, alpha=0.5, beta=0.5)

    def test_omega_positive(self):
        with pytest.raises(ValueError, match="omega"):
            GarchParams(omega=0.0, alpha=0.1, beta=0.1)

    def test_stationary_variance(self):
        p = GarchParams(omega=0.05, alpha=0.1, beta=0.85)
        assert p.stationary_variance == pytest.approx(1.0)


class TestGarchLoglik:
    def test_matches_hand_recursion(self):
        rng = np.random.default_rng(7)
        r = rng.standard_normal(20)
        p = GarchParams(omega=0.05, alpha=0.1, beta=0.85)
        assert garch_loglik(p, r) == pytest.approx(hand_loglik(p, r), abs=1e-12)

    def test_alpha_beta_zero_collapses_to_iid(self):
        # With alpha = beta = 0 the recursion is flat at omega from t >= 2;
        # the t = 1 term keeps the sample-variance initialization.
        rng = np.random.default_rng(8)
        r = rng.standard_normal(50)
        omega = 1.3
        p = GarchParams(omega=omega, alpha=0.0, beta=0.0)
        sigma2 = garch_variance_series(p, r)
        assert np.all(sigma2[1:] == omega)
        s0 = float(np.var(r, ddof=1))
        iid_terms = -0.5 * (np.log(2 * np.pi) + np.log(omega) + r[1:] ** 2 / omega)
        first = -0.5 * (np.log(2 * np.pi) + np.log(s0) + r[0] ** 2 / s0)
        assert garch_loglik(p, r) == pytest.approx(first + iid_terms.sum(), rel=1e-12)

    def test_omega_far_above_sample_variance_decreases_loglik(self):
        rng = np.random.default_rng(9)
        r = rng.standard_normal(500)
        lls = [
            garch_loglik(GarchParams(omega=w, alpha=0.05, beta=0.1), r)
            for w in (1.0, 5.0, 25.0, 125.0)
        ]
        assert all(a > b for a, b in zip(lls, lls[1:]))

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            garch_loglik(GarchParams(omega=1, alpha=0, beta=0), np.ones(5))


class TestGarchFit:
    def test_iid_gaussian_recovers_unit_variance(self):
        rng = np.random.default_rng(10)
        r = rng.standard_normal(10_000)
        p = garch_fit(r)
        assert p.alpha < 0.05
        assert p.stationary_variance == pytest.approx(1.0, rel=0.10)

    def test_simulation_recovery(self):
        true = GarchParams(omega=0.05, alpha=0.10, beta=0.85)
        data = synth_generate(SynthConfig(n_days=10_000, garch=true, seed=42))
        fit = garch_fit(data.returns().returns)
        assert fit.omega == pytest.approx(true.omega, abs=0.05)
        assert fit.alpha == pytest.approx(true.alpha, abs=0.05)
        assert fit.beta == pytest.approx(true.beta, abs=0.05)

    def test_constraints_hold_on_fit(self):
        rng = np.random.default_rng(11)
        r = rng.standard_normal(400)
        p = garch_fit(r)
        assert p.omega > 0 and p.alpha >= 0 and p.beta >= 0
        assert p.alpha + p.beta < 1

    def test_all_zero_returns_degenerate(self):
        with pytest.raises(NumericError, match="degenerate"):
            garch_fit(np.zeros(200))

    def test_loglik_at_true_params_beats_perturbed(self):
        true = GarchParams(omega=0.05, alpha=0.10, beta=0.85)
        data = synth_generate(SynthConfig(n_days=8_000, garch=true, seed=5))
        r = data.returns().returns
        base = garch_loglik(true, r)
        for p in (
            GarchParams(omega=0.2, alpha=0.10, beta=0.85),
            GarchParams(omega=0.05, alpha=0.30, beta=0.55),
            GarchParams(omega=0.05, alpha=0.01, beta=0.6),
        ):
            assert garch_loglik(p, r) < base


class TestGarchForecast:
    def setup_method(self):
        self.params = GarchParams(omega=0.05, alpha=0.1, beta=0.85)
        self.state = GarchState(last_return=0.3, last_variance=0.9)

    def test_alpha_beta_zero_forecasts_omega(self):
        p = GarchParams(omega=0.7, alpha=0.0, beta=0.0)
        fc = garch_forecast(p, self.state, 5)
        assert np.allclose(fc, 0.7)

    def test_monotone_convergence_to_stationary(self):
        fc = garch_forecast(self.params, GarchState(0.0, 0.2), 200)
        vbar = self.params.stationary_variance
        gaps = np.abs(fc - vbar)
        assert np.all(np.diff(gaps) <= 0)
        assert gaps[-1] < 1e-4

    def test_matches_iterated_expectation_recursion(self):
        # Oracle: iterate the recursion replacing r^2 by its expectation.
        p, st = self.params, self.state
        expected = []
        v = p.omega + p.alpha * st.last_return**2 + p.beta * st.last_variance
        expected.append(v)
        for _ in range(2):
            v = p.omega + (p.alpha + p.beta) * v
            expected.append(v)
        fc = garch_forecast(p, st, 3)
        assert np.allclose(fc, expected, rtol=0, atol=1e-12)

    def test_horizon_log_vol_is_log_sqrt_mean(self):
        fc = garch_forecast(self.params, self.state, 7)
        assert garch_horizon_log_vol(self.params, self.state, 7) == pytest.approx(
            math.log(math.sqrt(np.mean(fc)))
        )

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            garch_forecast(self.params, self.state, 0)


class TestEwma:
    def test_constant_returns_converge_to_square(self):
        c = 0.37
        assert ewma_vol(np.full(200, c)) == pytest.approx(c * c)

    def test_lambda_near_one_keeps_initial(self):
        rng = np.random.default_rng(12)
        r = rng.standard_normal(50)
        assert ewma_vol(r, lam=1 - 1e-9) == pytest.approx(r[0] ** 2, rel=1e-2)
        # the drift toward later squares shrinks as lambda -> 1
        drift9 = abs(ewma_vol(r, lam=1 - 1e-9) - r[0] ** 2)
        drift6 = abs(ewma_vol(r, lam=1 - 1e-6) - r[0] ** 2)
        assert drift9 < drift6

    def test_hand_recursion_five_points(self):
        r = np.array([0.1, -0.2, 0.05, 0.3, -0.15])
        lam = 0.94
        v = r[0] ** 2
        for x in r:
            v = lam * v + (1 - lam) * x**2
        assert ewma_vol(r, lam) == pytest.approx(v, abs=1e-15)

    def test_scale_covariance(self):
        rng = np.random.default_rng(13)
        r = rng.standard_normal(60)
        c = 3.7
        assert ewma_vol(c * r) == pytest.approx(c * c * ewma_vol(r), rel=1e-12)

    def test_rejects_empty_and_bad_lambda(self):
        with pytest.raises(ValueError):
            ewma_vol(np.array([]))
        with pytest.raises(ValueError):
            ewma_vol(np.ones(5), lam=1.0)


class TestHistoricalVar:
    def test_all_equal_returns_that_value(self):
        assert historical_var(np.full(40, -0.02)) == pytest.approx(-0.02)

    def test_order_statistic_on_100_distinct(self):
        rng = np.random.default_rng(14)
        r = rng.permutation(np.linspace(-0.5, 0.5, 100))
        assert historical_var(r, alpha=0.05) == sorted(r)[4]

    def test_appending_high_values_keeps_quantile(self):
        rng = np.random.default_rng(15)
        r = rng.standard_normal(100)
        q = historical_var(r, alpha=0.05)
        # ceil(0.05 * 119) = 6 = ceil(0.05 * 101): same order statistic rank
        extended = np.concatenate([r, np.full(19, r.max() + 1.0)])
        assert historical_var(extended[:101], alpha=0.05) == historical_var(
            np.concatenate([r, [r.max() + 1.0]]), alpha=0.05
        )
        assert historical_var(extended, alpha=0.05) == sorted(r)[5]

    def test_monotone_in_any_replacement(self):
        rng = np.random.default_rng(16)
        r = rng.standard_normal(80)
        q = historical_var(r, alpha=0.05)
        for idx in range(0, 80, 7):
            lowered = r.copy()
            lowered[idx] = lowered[idx] - 2.0
            assert historical_var(lowered, alpha=0.05) <= q

    def test_window_too_short(self):
        with pytest.raises(ValueError, match="window"):
            historical_var(np.ones(19), alpha=0.05)


class TestVarianceSeriesGuards:
    def test_lfilter_path_equals_hand_recursion_long(self):
        rng = np.random.default_rng(17)
        r = rng.standard_normal(400)
        p = GarchParams(omega=0.1, alpha=0.12, beta=0.8)
        assert np.allclose(
            garch_variance_series(p, r), hand_variance_recursion(p, r), atol=1e-10
        )
