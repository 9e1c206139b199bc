"""Rolling-window out-of-sample comparison of four forecasting approaches.

A  credibility blend of the global forecast and the relative-survival forecast
B  relative survival: global forecast times theta_hat
C  a separate GAPC model per sub-population (falls back to D when the fit fails)
D  the global model fitted on the super-population, applied unchanged

At each step the models are refitted on all years up to ``train_end`` and
scored on ``train_end + 1``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gapc
from .credibility import estimate_components, credibility_predict, credibility_weight
from .forecast import ORDERS, forecast_rates
from .msep import msep_closed_form, poisson_predictive_bounds
from .popsim import SimConfig, SimOutput, simulate
from .table import MortalityTable

log = logging.getLogger(__name__)

APPROACHES = ("A", "B", "C", "D")


def default_age_groups() -> tuple:
    return tuple((a, a + 4) for a in range(16, 86, 5))


@dataclass(frozen=True)
class EvalPlan:
    t_prime: int = 2015
    h: int = 6
    age_groups: tuple = field(default_factory=default_age_groups)
    approaches: tuple = APPROACHES
    replications: int = 3
    seed: int = 2024
    family: str = "LC"
    mode: str = "lognormal"
    binning: bool = True
    folds: int = 5
    frozen_orders: dict | None = None

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        bad = set(self.approaches) - set(APPROACHES)
        if bad:
            raise ValueError(f"unknown approaches {sorted(bad)}")
        for lo, hi in self.age_groups:
            if lo > hi:
                raise ValueError(f"empty age group {lo}-{hi}")


def rolling_windows(t_prime: int, h: int, last_year: int | None = None) -> list[tuple[int, int]]:
    """(train_end, test_year) pairs for a one-step-ahead rolling window."""
    if h < 1:
        raise ValueError("h must be >= 1")
    if last_year is not None and t_prime + h > last_year:
        raise ValueError(f"test years up to {t_prime + h} exceed the data (last year {last_year})")
    return [(t_prime + k, t_prime + k + 1) for k in range(h)]


def mare(pred, obs) -> float:
    """Mean absolute relative error; cells with F = 0 contribute 0."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        are = np.where(obs != 0, np.abs(pred - obs) / np.where(obs != 0, np.abs(obs), 1.0), 0.0)
    return float(are.mean())


def mean_poisson_deviance(pred, obs, exposure) -> float:
    """Average of 2 E (F log(F/mu) - F + mu) over cells, with 0 log 0 = 0."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    E = np.asarray(exposure, dtype=float)
    if np.any(~(pred > 0)):
        raise ValueError("predicted rates must be strictly positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        flog = np.where(obs > 0, obs * np.log(np.where(obs > 0, obs, 1.0) / pred), 0.0)
    return float(np.mean(2 * E * (flog - obs + pred)))


@dataclass(frozen=True)
class StepForecast:
    """One-step-ahead rate forecasts per approach for one population, indexed by age."""

    population: str
    train_end: int
    test_year: int
    rates: dict
    z: np.ndarray
    c_fallback: bool


def _fit_or_none(table: MortalityTable, family: str):
    try:
        f = gapc.fit(table, family)
    except (gapc.FitError, ValueError) as exc:
        log.info("separate %s fit for population %s failed: %s", family, table.population, exc)
        return None
    if not f.converged:
        log.info("separate %s fit for population %s did not converge", family, table.population)
        return None
    return f


def step_forecasts(tables: dict, train_end: int, plan: EvalPlan, populations: Sequence[str]) -> list[StepForecast]:
    """Fit on years <= ``train_end`` and forecast ``train_end + 1`` for every population."""
    train = {p: t.subset(years=(int(t.years[0]), train_end)) for p, t in tables.items()}
    glob = gapc.fit(train["0"], plan.family)
    if not glob.converged:
        log.info("global fit ending %d did not converge", train_end)
    rf, _ = forecast_rates(glob, 1, plan.mode, ORDERS, plan.frozen_orders)
    mu_bar = rf.mu_bar[:, 0]
    mu_hat = glob.rates()
    out = []
    for pop in populations:
        t = train[pop]
        est = estimate_components(t, mu_hat, binning=plan.binning, folds=plan.folds, seed=plan.seed)
        theta, var = est.components(plan.binning)
        z = credibility_weight(est.effective_deaths, var)
        rates = {"D": mu_bar.copy()}
        if "A" in plan.approaches:
            rates["A"] = credibility_predict(mu_bar, theta, z)[0]
        if "B" in plan.approaches:
            rates["B"] = np.where(np.isfinite(theta), mu_bar * theta, mu_bar)
        fallback = False
        if "C" in plan.approaches:
            sep = glob if pop == "0" else _fit_or_none(t, plan.family)
            if sep is None:
                fallback = True
                rates["C"] = mu_bar.copy()
            else:
                rates["C"] = forecast_rates(sep, 1, plan.mode, ORDERS, plan.frozen_orders)[0].mu_bar[:, 0]
        rates = {a: rates[a] for a in plan.approaches}
        out.append(StepForecast(pop, train_end, train_end + 1, rates, z, fallback))
    return out


@dataclass(frozen=True)
class MetricRow:
    approach: str
    population: str
    age_group: str
    replication: int
    mare: float
    deviance: float


METRIC_HEADER = ("approach", "population", "age_group", "replication", "mare", "deviance")


@dataclass(frozen=True)
class MetricTable:
    rows: tuple
    fallbacks: tuple = ()

    def value(self, approach: str, population: str, replication: int, metric: str = "mare") -> float:
        """Metric averaged over age groups (equal-size groups give the all-ages value)."""
        vals = [getattr(r, metric) for r in self.rows
                if r.approach == approach and r.population == population and r.replication == replication]
        if not vals:
            raise KeyError((approach, population, replication))
        return float(np.mean(vals))

    @property
    def replications(self) -> list[int]:
        return sorted({r.replication for r in self.rows})

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_HEADER)
            for r in self.rows:
                w.writerow((r.approach, r.population, r.age_group, r.replication, repr(r.mare), repr(r.deviance)))


def _group_label(g) -> str:
    return f"{g[0]}-{g[1]}"


def score(steps: list[StepForecast], tables: dict, plan: EvalPlan, replication: int) -> list[MetricRow]:
    """Metrics per approach, population and age group over all window steps."""
    rows = []
    by_pop: dict[str, list[StepForecast]] = {}
    for s in steps:
        by_pop.setdefault(s.population, []).append(s)
    for pop in sorted(by_pop):
        t = tables[pop]
        ss = sorted(by_pop[pop], key=lambda s: s.test_year)
        cols = [t.year_index(s.test_year) for s in ss]
        F = t.crude_rate[:, cols]
        E = t.exposure[:, cols]
        for a in plan.approaches:
            P = np.column_stack([s.rates[a] for s in ss])
            for g in plan.age_groups:
                rows_ = [t.age_index(x) for x in range(g[0], g[1] + 1)]
                f, e, p = F[rows_], E[rows_], P[rows_]
                ok = e > 0
                if not np.all(ok):
                    # unobserved cells are excluded from both metrics
                    f, e, p = f[ok], e[ok], p[ok]
                rows.append(MetricRow(a, pop, _group_label(g), replication, mare(p, f), mean_poisson_deviance(p, f, e)))
    return rows


def run_approaches(data: SimOutput | dict, plan: EvalPlan, replication: int = 0,
                   populations: Sequence[str] | None = None) -> tuple[list[MetricRow], list]:
    """Rolling-window evaluation of one data set; returns metric rows and C-fallback records."""
    tables = data.tables if isinstance(data, SimOutput) else data
    if "0" not in tables:
        raise ValueError('data must contain the super-population "0"')
    pops = sorted(tables) if populations is None else list(populations)
    last = min(int(t.years[-1]) for t in tables.values())
    steps = []
    for train_end, _ in rolling_windows(plan.t_prime, plan.h, last):
        try:
            steps.extend(step_forecasts(tables, train_end, plan, pops))
        except (gapc.FitError, ValueError) as exc:
            raise RuntimeError(f"replication {replication}, window ending {train_end}: {exc}") from exc
    fallbacks = [(replication, s.population, s.train_end) for s in steps if s.c_fallback]
    return score(steps, tables, plan, replication), fallbacks


def replication_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1, np.uint64)[0])


def run_replications(sim: SimConfig, plan: EvalPlan, threads: int = 1) -> MetricTable:
    """Simulate ``plan.replications`` independent data sets and evaluate each."""

    def one(r):
        data = simulate(replace(sim, seed=replication_seed(plan.seed, r)))
        return run_approaches(data, plan, replication=r)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        results = list(ex.map(one, range(plan.replications)))
    rows = tuple(row for rs, _ in results for row in rs)
    fb = tuple(f for _, fs in results for f in fs)
    return MetricTable(rows, fb)


FAN_HEADER = ("population", "age", "year", "observed_F", "mu_hat", "msep_lo", "msep_hi", "pois_lo", "pois_hi")


@dataclass(frozen=True)
class FanRow:
    population: str
    age: int
    year: int
    observed_F: float
    mu_hat: float
    msep_lo: float
    msep_hi: float
    pois_lo: float
    pois_hi: float
    msep: float
    z: float
    var_mu_theta: float
    var_theta_hat: float


def fan_plot_data(tables: dict, t_prime: int, h: int = 5, age: int = 65, family: str = "LC",
                  mode: str = "lognormal", binning: bool = True, folds: int = 5, seed: int = 0,
                  populations: Sequence[str] | None = None, msep_form: str = "exact",
                  pois_sims: int = 100_000) -> list[FanRow]:
    """Credibility forecasts at one age with MSEP and Poisson std-dev bands.

    Models are fitted on years <= ``t_prime``; the Poisson band uses the
    observed exposure of each forecast year and is simulated.
    """
    train = {p: t.subset(years=(int(t.years[0]), t_prime)) for p, t in tables.items()}
    glob = gapc.fit(train["0"], family)
    rf, _ = forecast_rates(glob, h, mode)
    mu_hat = glob.rates()
    i = int(age) - int(glob.ages[0])
    pops = [p for p in sorted(tables) if p != "0"] if populations is None else list(populations)
    rows = []
    for pop in pops:
        t = train[pop]
        est = estimate_components(t, mu_hat, binning=binning, folds=folds, seed=seed)
        theta, var = est.components(binning)
        z = float(credibility_weight(est.effective_deaths, var)[i])
        w = np.where(t.observed[i], t.exposure[i] * mu_hat[i], 0.0)
        full = tables[pop]
        for j in range(h):
            year = t_prime + j + 1
            mu_bar, s2 = float(rf.mu_bar[i, j]), float(rf.sigma2_bar[i, j])
            mu_c = float(credibility_predict(mu_bar, theta[i], z)[0])
            d = msep_closed_form(mu_bar, s2, float(var[i]), z, w, form=msep_form)
            half = math.sqrt(d.msep)
            if full.years[0] <= year <= full.years[-1]:
                E = float(full.exposure[full.age_index(age), full.year_index(year)])
                F = float(full.crude_rate[full.age_index(age), full.year_index(year)])
            else:
                E, F = math.nan, math.nan
            if E > 0:
                plo, phi = poisson_predictive_bounds(mu_c, E, n_sims=pois_sims, seed=replication_seed(seed, year))
            else:
                plo, phi = math.nan, math.nan
            rows.append(FanRow(pop, int(age), year, F, mu_c, mu_c - half, mu_c + half, float(plo), float(phi),
                               d.msep, z, d.var_mu_theta, d.var_theta_hat))
    return rows


def write_fan_csv(rows: Sequence[FanRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FAN_HEADER)
        for r in rows:
            w.writerow([r.population, r.age, r.year] + [repr(float(getattr(r, k))) for k in FAN_HEADER[3:]])
