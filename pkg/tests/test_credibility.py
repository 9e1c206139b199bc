import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from credmort.credibility import (
    credibility_age_only, credibility_forecast, credibility_predict, credibility_weight, effective_deaths,
    estimate_components, theta_mle, var_theta_plugin, write_credibility_csv,
)
from credmort.table import MortalityTable


def row_table(E, F):
    E = np.asarray(E, float)[None, :]
    F = np.asarray(F, float)[None, :]
    return MortalityTable("1", [65], np.arange(2000, 2000 + E.shape[1]), E, E * F)


def test_theta_examples():
    t = row_table([100, 200], [0.02, 0.03])
    assert theta_mle(t, [[0.025, 0.025]])[0] == pytest.approx(8 / 7.5)
    t = row_table([100, 200], [0.02, 0.03])
    assert theta_mle(t, t.crude_rate)[0] == pytest.approx(1.0)
    t2 = row_table([200, 400], [0.02, 0.03])
    assert theta_mle(t2, [[0.025, 0.025]])[0] == pytest.approx(theta_mle(t, [[0.025, 0.025]])[0])


def test_theta_undefined_when_no_expected_deaths():
    t = MortalityTable("1", [65], [2000, 2001], [[0.0, 0.0]], [[0.0, 0.0]])
    assert np.isnan(theta_mle(t, [[0.01, 0.01]])[0])
    assert effective_deaths(t, [[0.01, 0.01]])[0] == 0


def test_var_plugin_examples():
    t = row_table([1000, 1000], [0.04, 0.05])
    raw, adj = var_theta_plugin(t, [[0.03, 0.04]])
    assert raw[0] == pytest.approx((0.0004 - 0.00007) / 0.0049)
    assert adj[0] == raw[0]
    t = row_table([1000, 1000], [0.03, 0.04])
    raw, adj = var_theta_plugin(t, [[0.04, 0.03]])
    assert raw[0] < 0 and adj[0] == 0


def test_weight_examples():
    assert credibility_weight(90, 0.1) == pytest.approx(0.9)
    assert credibility_weight(90, 0.0) == 0.0
    assert credibility_weight(1e12, 0.05) > 1 - 1e-9


@settings(max_examples=100)
@given(st.floats(1e-3, 1e6), st.floats(1e-6, 1.0), st.floats(1.01, 10))
def test_weight_monotone(W, V, k):
    assert credibility_weight(W * k, V) > credibility_weight(W, V)
    assert credibility_weight(W, V * k) > credibility_weight(W, V)


def test_predict_examples():
    assert credibility_predict(0.02, 1.3, 0.0)[0] == 0.02
    assert credibility_predict(0.02, 1.3, 1.0)[0] == pytest.approx(0.026)
    mu, blend = credibility_predict(0.02, 16 / 15, 0.9)
    assert mu == pytest.approx(0.0212)
    assert blend == pytest.approx(1 + 0.9 * (16 / 15 - 1))
    with pytest.raises(ValueError):
        credibility_predict(0.02, 1.1, 1.2)
    with pytest.raises(ValueError):
        credibility_predict(0.02, np.nan, 0.5)
    assert credibility_predict(0.02, np.nan, 0.0)[0] == 0.02


@settings(max_examples=200)
@given(st.floats(1e-5, 0.5), st.floats(0, 3), st.floats(0, 1))
def test_predict_is_convex_combination(mu, theta, z):
    m, blend = credibility_predict(mu, theta, z)
    assert m == mu * blend
    lo, hi = sorted((mu, mu * theta))
    # blend is formed as 1 + z (theta - 1), so rounding is absolute in mu
    slack = 4e-16 * mu
    assert lo - slack <= m <= hi + slack
    assert m == pytest.approx((1 - z) * mu + z * mu * theta, rel=1e-12, abs=slack)


def test_collapse_limits():
    mu_bar, theta = 0.0123, 1.37
    z = credibility_weight(1e12, 0.05)
    assert abs(credibility_predict(mu_bar, theta, z)[0] - mu_bar * theta) < 1e-12
    assert credibility_predict(mu_bar, theta, credibility_weight(1e12, 0.0))[0] == mu_bar


def test_age_only_example():
    t = row_table([100, 300], [0.012, 0.008])
    pred, z, theta = credibility_age_only(t, 0.01, 0.05)
    assert theta[0] == pytest.approx(0.9)
    assert z[0] == pytest.approx(1 / 6)
    assert pred[0] == pytest.approx(0.0098333333333)
    assert credibility_age_only(t, 0.01, 0.0)[0][0] == 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_general_path_reproduces_age_only(seed):
    rng = np.random.default_rng(seed)
    X, T = 3, 6
    E = rng.uniform(10, 1000, (X, T))
    mu_x = rng.uniform(0.001, 0.1, X)
    D = rng.poisson(E * mu_x[:, None]).astype(float)
    t = MortalityTable("1", np.arange(X), np.arange(T), E, D)
    V = rng.uniform(0, 0.2, X)
    pred, z, theta = credibility_age_only(t, mu_x, V)
    mu_hat = np.broadcast_to(mu_x[:, None], (X, T))
    zg = credibility_weight(effective_deaths(t, mu_hat), V)
    th = theta_mle(t, mu_hat)
    assume(np.all(np.isfinite(th)))
    gen = credibility_predict(mu_x, th, zg)[0]
    assert np.allclose(gen, pred, rtol=1e-12)
    assert np.allclose(zg, z, rtol=1e-12)


def test_z_zero_iff_var_zero(sim, global_fit):
    est = estimate_components(sim.tables["2"], global_fit.rates(), binning=False)
    z = est.weights(binned=False)
    assert np.array_equal(z == 0, est.var_theta == 0)


def test_binned_components_piecewise_constant(sim, global_fit):
    est = estimate_components(sim.tables["1"], global_fit.rates())
    for v, b in ((est.theta_binned, est.theta_bins), (est.var_binned, est.var_bins)):
        assert len(np.unique(v)) == b.n_bins
        changes = np.nonzero(np.diff(v))[0]
        assert len(changes) == b.n_bins - 1
    assert np.all(est.var_binned >= 0) and np.all(est.theta_binned >= 0)


def test_population_three_theta_close_to_one(sim, global_fit):
    est = estimate_components(sim.tables["3"], global_fit.rates())
    assert np.all(np.abs(est.theta_hat - 1) < 0.05)


def test_var_recovered_on_large_exposure():
    # known Var(Theta) = 0.01, huge exposure, many years
    rng = np.random.default_rng(7)
    X, T = 400, 30
    mu = np.full((X, T), 0.01)
    theta = np.exp(rng.normal(-np.log1p(0.01) / 2, np.sqrt(np.log1p(0.01)), X))
    E = np.full((X, T), 1e7)
    D = rng.poisson(E * mu * theta[:, None]).astype(float)
    t = MortalityTable("1", np.arange(X), np.arange(T), E, D)
    raw, _ = var_theta_plugin(t, mu)
    assert raw.mean() == pytest.approx(0.01, rel=0.3)


def test_forecast_and_csv(tmp_path, sim, global_fit):
    est = estimate_components(sim.tables["1"], global_fit.rates())
    mu_bar = np.tile(global_fit.rates()[:, -1:], (1, 3))
    r = credibility_forecast(est, mu_bar, [2022, 2023, 2024])
    assert np.array_equal(r.mu_cred, mu_bar * r.theta_blend[:, None])
    p = tmp_path / "c.csv"
    write_credibility_csv([r], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "population,age,year,z,theta_hat,var_theta,mu_global,mu_sub,mu_cred"
    assert len(lines) == 1 + r.ages.size * 3
