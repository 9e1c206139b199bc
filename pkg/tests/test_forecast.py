import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credmort import gapc
from credmort.forecast import (
    IndexModel, fit_index, forecast_index, forecast_rates, lognormal_moments, predictor_moments, simulate_index,
)


def test_exact_linear_trend():
    m = fit_index([0, -1, -2, -3, -4])
    assert m.order == (0, 1, 0) and m.drift == -1 and m.sigma2 == 0


def test_constant_series():
    m = fit_index([3.0] * 8)
    assert m.order == (0, 1, 0) and m.drift == 0 and m.sigma2 == 0


def test_short_series_rejected():
    with pytest.raises(ValueError, match="at least 5"):
        fit_index([1, 2, 3, 4])


def test_white_noise_drift_near_zero():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m = fit_index(np.cumsum(rng.normal(0, 1, 60)), [(0, 1, 0)])
        hits += abs(m.drift) < 3 * math.sqrt(m.sigma2 / 59)
    assert hits >= 97


@pytest.mark.slow
def test_ar1_selected():
    picks = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        e = rng.normal(0, 1, 500)
        y = np.empty(500)
        prev = 0.0
        for i in range(500):
            prev = 0.8 * prev + e[i]
            y[i] = prev
        picks += fit_index(np.concatenate([[0.0], np.cumsum(y)])).order == (1, 1, 0)
    assert picks >= 90


def test_ma1_recovered():
    rng = np.random.default_rng(3)
    e = rng.normal(0, 0.5, 401)
    dy = 0.2 + e[1:] + 0.6 * e[:-1]
    m = fit_index(np.concatenate([[0.0], np.cumsum(dy)]))
    assert m.order == (0, 1, 1)
    assert m.ma == pytest.approx(0.6, abs=0.1) and m.drift == pytest.approx(0.2, abs=0.1)


def test_rwd_closed_form():
    m = IndexModel((0, 1, 0), -1.0, 0.0, 0.0, 0.25, 0.0, 10)
    f = forecast_index(m, [-3.0, -4.0], 4)
    assert f.mean[-1] == -8 and f.var[-1] == 1.0
    assert np.allclose(np.diff(f.mean), -1) and np.allclose(np.diff(f.var), 0.25)
    with pytest.raises(ValueError):
        forecast_index(m, [-4.0], 0)


@pytest.mark.parametrize("model", [
    IndexModel((1, 1, 0), -0.5, 0.7, 0.0, 0.3, 0.0, 30),
    IndexModel((0, 1, 1), -0.5, 0.0, 0.4, 0.3, 0.0, 30),
])
def test_forecast_moments_match_paths(model):
    hist = np.array([0.0, -0.4, -1.3, -1.5, -2.4])
    f = forecast_index(model, hist, 6)
    paths = simulate_index(model, hist, 6, np.random.default_rng(11), n=1_000_000)
    assert np.allclose(paths.mean(axis=0), f.mean, rtol=5e-3)
    assert np.allclose(paths.var(axis=0), f.var, rtol=5e-3)


def test_lognormal_moments_example():
    mu, s2 = lognormal_moments(-4.0, 0.04)
    assert mu == pytest.approx(math.exp(-3.98))
    assert s2 == pytest.approx(math.expm1(0.04) * math.exp(-7.96))
    mu0, s20 = lognormal_moments(-4.0, 0.0)
    assert mu0 == math.exp(-4.0) and s20 == 0.0
    assert lognormal_moments(-4.0, 0.04, "plugin")[0] == math.exp(-4.0)


@settings(max_examples=5, deadline=None)
@given(st.floats(-8, -1), st.floats(0.2, 2.0), st.floats(-1, 1), st.floats(0.001, 0.2))
def test_lognormal_moments_monte_carlo(a, b, m, s2):
    mean, var = a + b * m, b * b * s2
    mu, sig2 = lognormal_moments(mean, var)
    draws = np.exp(a + b * np.random.default_rng(0).normal(m, math.sqrt(s2), 10_000_000))
    assert draws.mean() == pytest.approx(mu, rel=1e-3)
    assert draws.var() == pytest.approx(sig2, rel=1e-2)
    assert mu >= math.exp(mean)


def test_rate_forecast_invariants(global_fit):
    rf, fc = forecast_rates(global_fit, 8)
    assert np.all(rf.mu_bar > 0) and np.all(rf.sigma2_bar >= 0)
    if fc.kappa_model.order == (0, 1, 0):
        assert np.all(np.diff(rf.sigma2_bar, axis=1) >= 0)
    plug, _ = forecast_rates(global_fit, 8, mode="plugin")
    assert np.all(rf.mu_bar >= plug.mu_bar)
    assert np.array_equal(rf.years, np.arange(2022, 2030))


def test_future_cohorts_use_gamma_forecast(sim):
    t = sim.tables["0"].subset(ages=(40, 85), years=(1990, 2021))
    f = gapc.fit(t, "APC")
    _, fc = forecast_rates(f, 5)
    # age 40 in 2023 belongs to cohort 1983, beyond the last fitted cohort 1981
    m, v = predictor_moments(fc, 40, 2)
    assert m == pytest.approx(f.alpha[0] + fc.kappa.mean[1] + fc.gamma.mean[1])
    assert v == pytest.approx(fc.kappa.var[1] + fc.gamma.var[1])
    # age 85 in 2022 is cohort 1937, already fitted
    m, v = predictor_moments(fc, 85, 1)
    assert m == pytest.approx(f.alpha[-1] + fc.kappa.mean[0] + f.gamma[1937 - f.cohorts[0]])
    assert v == pytest.approx(fc.kappa.var[0])


def test_index_model_serialises(global_fit):
    _, fc = forecast_rates(global_fit, 3)
    d = fc.to_dict()
    assert IndexModel.from_dict(d["kappa"]["model"]) == fc.kappa_model
    assert len(d["kappa"]["mean"]) == 3


def test_frozen_orders(global_fit):
    _, fc = forecast_rates(global_fit, 3, frozen={"kappa": (0, 1, 1)})
    assert fc.kappa_model.order == (0, 1, 1)
