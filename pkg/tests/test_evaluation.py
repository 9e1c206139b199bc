import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from credmort.evaluation import (
    EvalPlan, MetricRow, MetricTable, fan_plot_data, mare, mean_poisson_deviance, rolling_windows, run_approaches,
    run_replications, step_forecasts, write_fan_csv, FAN_HEADER, METRIC_HEADER,
)
from credmort.popsim import SimConfig
from credmort.table import MortalityTable

GROUPS = ((60, 69), (70, 85))


def plan(**kw):
    base = dict(t_prime=2017, h=2, age_groups=GROUPS, replications=2)
    base.update(kw)
    return EvalPlan(**base)


@pytest.fixture(scope="module")
def old(sim):
    return {p: t.subset(ages=(60, 85)) for p, t in sim.tables.items()}


def test_rolling_windows():
    assert rolling_windows(2015, 6) == [(2015 + k, 2016 + k) for k in range(6)]
    assert rolling_windows(2015, 6, 2021)[-1] == (2020, 2021)
    with pytest.raises(ValueError, match="exceed"):
        rolling_windows(2016, 6, 2021)
    with pytest.raises(ValueError):
        rolling_windows(2015, 0)


def test_mare_examples():
    assert mare([0.015], [0.01]) == pytest.approx(0.5)
    assert mare([0.015], [0.0]) == 0.0
    obs = np.full(4, 0.01)
    assert mare(obs * [1.1, 0.8, 1.3, 0.6], obs) == pytest.approx(0.25)


def test_deviance_examples():
    assert mean_poisson_deviance([0.01], [0.02], [100]) == pytest.approx(4 * math.log(2) - 2)
    assert mean_poisson_deviance([0.01, 0.03], [0.01, 0.03], [50, 70]) == 0.0
    assert mean_poisson_deviance([0.01], [0.0], [100]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        mean_poisson_deviance([0.0], [0.01], [1])


@settings(max_examples=200)
@given(st.floats(1e-4, 0.5), st.floats(1e-4, 0.5), st.floats(1, 1e5))
def test_deviance_nonnegative_and_minimised_at_truth(mu, F, E):
    d = mean_poisson_deviance([mu], [F], [E])
    assert d >= -1e-9 * E * F
    assert d >= mean_poisson_deviance([F], [F], [E])


def test_step_uses_no_future_data(old):
    p = plan()
    ref = step_forecasts(old, 2016, p, ["1", "2"])
    bad = {}
    for k, t in old.items():
        D = t.deaths.copy()
        D[:, t.years > 2016] *= 3
        bad[k] = MortalityTable(k, t.ages, t.years, t.exposure, D)
    new = step_forecasts(bad, 2016, p, ["1", "2"])
    for a, b in zip(ref, new):
        for k in a.rates:
            assert np.array_equal(a.rates[k], b.rates[k])


def test_approach_a_equals_d_where_weight_is_zero(old):
    # sub-population with the aggregate's own crude rates carries no signal
    half = {"0": old["0"], "1": MortalityTable("1", old["0"].ages, old["0"].years,
                                               old["0"].exposure / 2, old["0"].deaths / 2)}
    steps = step_forecasts(half, 2016, plan(binning=False), ["1"]) + step_forecasts(old, 2016, plan(), ["1", "3"])
    zero_seen = False
    for s in steps:
        zero = s.z == 0
        zero_seen |= bool(zero.any())
        assert np.array_equal(s.rates["A"][zero], s.rates["D"][zero])
    assert zero_seen


def test_fallback_when_separate_fit_fails(old):
    E = old["1"].exposure.copy()
    E[0] = 0.0  # age 60 structurally empty
    empty = MortalityTable("9", old["1"].ages, old["1"].years, E, old["1"].deaths * (E > 0))
    tabs = dict(old, **{"9": empty})
    steps = step_forecasts(tabs, 2016, plan(), ["9"])
    assert steps[0].c_fallback and np.array_equal(steps[0].rates["C"], steps[0].rates["D"])


def test_population_order_does_not_matter(old):
    a, _ = run_approaches(old, plan(h=1), populations=["1", "3"])
    b, _ = run_approaches(old, plan(h=1), populations=["3", "1"])
    assert sorted(a, key=str) == sorted(b, key=str)


def test_super_population_required(old):
    with pytest.raises(ValueError, match="super-population"):
        run_approaches({"1": old["1"]}, plan())


def test_replications_thread_invariant(tmp_path):
    sim = SimConfig(ages=(60, 85), years=(2000, 2021))
    one = run_replications(sim, plan(), threads=1)
    two = run_replications(sim, plan(), threads=2)
    assert one.rows == two.rows and one.replications == [0, 1]
    one.write_csv(tmp_path / "a.csv")
    two.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.reader((tmp_path / "a.csv").open()))
    assert tuple(rows[0]) == METRIC_HEADER
    assert len(rows) - 1 == 4 * 4 * len(GROUPS) * 2
    assert {r[0] for r in rows[1:]} == {"A", "B", "C", "D"}


def test_metric_table_value():
    t = MetricTable((MetricRow("A", "1", "60-69", 0, 0.1, 1.0), MetricRow("A", "1", "70-85", 0, 0.3, 3.0)))
    assert t.value("A", "1", 0) == pytest.approx(0.2) and t.value("A", "1", 0, "deviance") == 2.0
    with pytest.raises(KeyError):
        t.value("B", "1", 0)


def test_fan_plot_rows(old, tmp_path):
    rows = fan_plot_data(old, 2015, h=5, age=65, seed=1, pois_sims=20_000)
    assert len(rows) == 3 * 5
    for r in rows:
        assert r.msep_lo < r.mu_hat < r.msep_hi and r.pois_lo < r.mu_hat < r.pois_hi
        assert r.msep_hi - r.mu_hat == pytest.approx(math.sqrt(r.msep))
    write_fan_csv(rows, tmp_path / "f.csv")
    head = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert tuple(head.split(",")) == FAN_HEADER


def test_plan_validation():
    with pytest.raises(ValueError):
        EvalPlan(approaches=("A", "E"))
    with pytest.raises(ValueError):
        EvalPlan(age_groups=((50, 40),))
