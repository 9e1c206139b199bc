import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credmort.popsim import (
    GompertzBaseline, MatrixBaseline, SimConfig, ThetaLaw, death_prob, poisson_approx_check,
    poisson_approx_deviation, simulate,
)


def small(**kw):
    base = dict(ages=(20, 40), years=(2000, 2010), cohort_size={"1": 2000, "2": 300},
                theta_law={"1": ThetaLaw("uniform", 0.7, 0.8), "2": ThetaLaw("constant", 1.2)})
    base.update(kw)
    return SimConfig(**base)


def flat(value):
    return lambda ages, years: np.full((len(ages), len(years)), float(value))


def test_death_prob_examples():
    assert death_prob(0.0) == 0.5
    assert death_prob(-3.0, 1.25) == pytest.approx(1.25 * np.exp(-3) / (1 + 1.25 * np.exp(-3)), rel=1e-14)
    assert death_prob(-800.0) == 0.0
    assert death_prob(800.0) == 1.0
    with pytest.raises(ValueError):
        death_prob(0.0, 0.0)


@settings(max_examples=200)
@given(st.floats(-30, 8), st.floats(0.01, 100))
def test_death_prob_log_odds(delta, theta):
    q = death_prob(delta, theta)
    assert 0 < q < 1
    assert np.log(q / (1 - q)) == pytest.approx(delta + np.log(theta), abs=1e-8)


def test_extreme_baselines():
    none_die = simulate(small(baseline=flat(-800)))
    assert all(t.deaths.sum() == 0 for t in none_die.tables.values())
    all_die = simulate(small(baseline=flat(800)))
    assert all(r.lives.sum() == 0 for r in all_die.raw.values())


def test_seed_determinism():
    a, b = simulate(small(seed=5)), simulate(small(seed=5))
    c = simulate(small(seed=6))
    for p in a.tables:
        assert np.array_equal(a.tables[p].deaths, b.tables[p].deaths)
        assert np.array_equal(a.tables[p].exposure, b.tables[p].exposure)
    assert not np.array_equal(a.tables["1"].deaths, c.tables["1"].deaths)


def test_adding_a_population_leaves_others_unchanged():
    a = simulate(small())
    sizes = {"1": 2000, "2": 300, "3": 100}
    laws = {"1": ThetaLaw("uniform", 0.7, 0.8), "2": ThetaLaw("constant", 1.2), "3": ThetaLaw("constant", 1.0)}
    b = simulate(small(cohort_size=sizes, theta_law=laws))
    assert np.array_equal(a.tables["1"].deaths, b.tables["1"].deaths)


def test_aggregate_is_cellwise_sum():
    s = simulate(small())
    assert np.array_equal(s.tables["0"].deaths, s.tables["1"].deaths + s.tables["2"].deaths)
    assert np.allclose(s.tables["0"].exposure, s.tables["1"].exposure + s.tables["2"].exposure)
    assert s.populations == ["0", "1", "2"]


def test_closed_cohorts_conserve_lives():
    s = simulate(small())
    for r in s.raw.values():
        N, D = r.lives, r.raw_deaths
        assert np.all(D <= N) and np.all(D >= 0)
        assert np.array_equal(N[1:, 1:], N[:-1, :-1] - D[:-1, :-1])


def test_deaths_match_binomial_law():
    cfg = SimConfig(ages=(40, 80), years=(2000, 2015), cohort_size={"1": 200_000},
                    theta_law={"1": ThetaLaw("constant", 1.5)}, seed=9)
    s = simulate(cfg)
    r = s.raw["1"]
    q = death_prob(cfg.baseline(r.ages, r.years), 1.5)
    ok = r.lives > 0
    zs = (r.raw_deaths[ok] - r.lives[ok] * q[ok]) / np.sqrt(r.lives[ok] * q[ok] * (1 - q[ok]))
    assert abs(zs.mean()) < 4 / np.sqrt(zs.size)
    assert zs.std() == pytest.approx(1.0, abs=0.1)


def test_theta_draws_follow_law():
    s = simulate()
    assert np.all((s.theta["1"] >= 0.7) & (s.theta["1"] <= 0.8))
    assert np.all((s.theta["2"] >= 1.2) & (s.theta["2"] <= 1.3))
    assert np.all(s.theta["3"] == 1.0)


def test_large_population_rates_track_theta(sim):
    # crude rate ratios of sub-population 1 to 3 sit near the drawn theta band at older ages
    t1, t3 = sim.tables["1"].subset(ages=(60, 85)), sim.tables["3"].subset(ages=(60, 85))
    ratio = t1.deaths.sum() / t1.exposure.sum() / (t3.deaths.sum() / t3.exposure.sum())
    assert 0.65 < ratio < 0.85


def test_write_outputs(tmp_path):
    s = simulate(small())
    s.write(tmp_path)
    rows = list(csv.DictReader((tmp_path / "theta_true.csv").open()))
    assert len(rows) == 2 * 21
    first = [r for r in rows if r["population"] == "1" and r["age"] == "20"][0]
    assert float(first["theta"]) == s.theta["1"][20]
    assert (tmp_path / "mortality.csv").read_text().splitlines()[0].startswith("population,")


def test_config_validation():
    with pytest.raises(ValueError, match="entry_age"):
        small(entry_age=30)
    with pytest.raises(ValueError, match="same sub-populations"):
        small(cohort_size={"1": 10})
    with pytest.raises(ValueError, match="reserved"):
        SimConfig(cohort_size={"0": 1}, theta_law={"0": ThetaLaw()})
    with pytest.raises(ValueError, match="unknown theta law"):
        ThetaLaw("gamma").draw(np.random.default_rng(0), 3)


def test_matrix_baseline_csv(tmp_path):
    g = GompertzBaseline()
    ages, years = np.arange(0, 42), np.arange(1959, 2012)
    p = tmp_path / "b.csv"
    with p.open("w") as fh:
        fh.write("age,year,delta\n")
        d = g(ages, years)
        for i, a in enumerate(ages):
            for j, y in enumerate(years):
                fh.write(f"{a},{y},{float(d[i, j])!r}\n")
    m = MatrixBaseline.from_csv(p)
    assert np.array_equal(m(ages, years), d)
    cfg = dict(ages=(20, 40), years=(2000, 2010))
    assert np.array_equal(simulate(small(baseline=m, **cfg)).tables["1"].deaths,
                          simulate(small(**cfg)).tables["1"].deaths)
    with pytest.raises(ValueError, match="baseline covers"):
        simulate(small(baseline=m, ages=(20, 60)))


def test_poisson_approximation_examples():
    assert poisson_approx_check([1e-6], 1e3) < 1e-5
    assert poisson_approx_check([0.5], 100) > 0.5
    with pytest.raises(ValueError):
        poisson_approx_deviation(0.0, 10)


@settings(max_examples=100)
@given(st.floats(1e-6, 0.2), st.floats(1.01, 3), st.floats(1, 1e4))
def test_poisson_deviation_grows_with_q(q, k, N):
    assert poisson_approx_deviation(min(q * k, 0.5), N) >= poisson_approx_deviation(q, N)
