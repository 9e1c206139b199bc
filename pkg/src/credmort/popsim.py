"""Synthetic sub-populations evolved as closed binomial cohorts.

Each sub-population i has death probabilities with log-odds
``log(Theta_x^i) + delta[x, t]``, where ``delta`` is a baseline log-odds
surface and Theta_x^i a per-age random effect drawn once. Cohorts enter at
``entry_age`` with a fixed initial size and lose ``Binomial(N, q)`` lives
each year. Lives are converted to central exposures and deaths on the
Lexis diagram, and the super-population ``"0"`` is the cell-wise sum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .table import RawLivesTable, aggregate, lexis_convert, write_csv


def death_prob(delta, theta=1.0):
    """q = theta e^delta / (1 + theta e^delta), computed stably."""
    delta = np.asarray(delta, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("theta must be positive")
    z = delta + np.log(theta)
    e = np.exp(-np.abs(z))
    q = np.where(z < 0, e / (1 + e), 1 / (1 + e))
    return float(q) if q.ndim == 0 else q


def poisson_approx_deviation(q, N, theta=1.0):
    """Relative gap between (1-q)^N and exp(-N theta e^delta) for the induced delta.

    ``q`` is the death probability under effect ``theta``, so
    theta e^delta = q / (1 - q).
    """
    q = np.asarray(q, dtype=float)
    N = np.asarray(N, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("q must lie in (0, 1)")
    log_binom = N * np.log1p(-q)
    log_pois = -N * q / (1 - q)
    return np.abs(np.expm1(log_pois - log_binom))


def poisson_approx_check(q_grid, N) -> float:
    """Maximum relative deviation of the Poisson approximation over ``q_grid``."""
    return float(np.max(poisson_approx_deviation(q_grid, N)))


@dataclass(frozen=True)
class GompertzBaseline:
    """Log-odds baseline linear in age with age-dependent linear improvement.

    delta[x, t] = level + slope x - (improvement + improvement_age x) (t - ref_year)
    """

    level: float = -9.8
    slope: float = 0.095
    improvement: float = 0.022
    improvement_age: float = -0.00015
    ref_year: int = 2000

    def __call__(self, ages, years) -> np.ndarray:
        x = np.asarray(ages, dtype=float)[:, None]
        t = np.asarray(years, dtype=float)[None, :]
        rate = self.improvement + self.improvement_age * x
        return self.level + self.slope * x - rate * (t - self.ref_year)


@dataclass(frozen=True)
class MatrixBaseline:
    """Baseline log-odds given on a grid; requests outside it are an error."""

    ages: np.ndarray
    years: np.ndarray
    delta: np.ndarray

    def __call__(self, ages, years) -> np.ndarray:
        ages = np.asarray(ages)
        years = np.asarray(years)
        i = ages - self.ages[0]
        j = years - self.years[0]
        if i.min() < 0 or i.max() >= self.ages.size or j.min() < 0 or j.max() >= self.years.size:
            raise ValueError(
                f"baseline covers ages {self.ages[0]}..{self.ages[-1]}, years {self.years[0]}..{self.years[-1]}; "
                f"simulation needs ages {ages.min()}..{ages.max()}, years {years.min()}..{years.max()}"
            )
        return self.delta[np.ix_(i, j)]

    @classmethod
    def from_csv(cls, path) -> "MatrixBaseline":
        """Read a long CSV with header ``age,year,delta``."""
        cells = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(reader.fieldnames) != {"age", "year", "delta"}:
                raise ValueError(f"{path}: header must be age,year,delta")
            for rowno, row in enumerate(reader, start=2):
                try:
                    cells[int(row["age"]), int(row["year"])] = float(row["delta"])
                except ValueError:
                    raise ValueError(f"{path}: row {rowno}: non-numeric field") from None
        ages = np.arange(min(a for a, _ in cells), max(a for a, _ in cells) + 1)
        years = np.arange(min(y for _, y in cells), max(y for _, y in cells) + 1)
        delta = np.empty((ages.size, years.size))
        for i, a in enumerate(ages):
            for j, y in enumerate(years):
                try:
                    delta[i, j] = cells[int(a), int(y)]
                except KeyError:
                    raise ValueError(f"{path}: missing baseline cell age={a} year={y}") from None
        return cls(ages, years, delta)


@dataclass(frozen=True)
class ThetaLaw:
    """Per-age random-effect law: ``uniform(low, high)``, ``lognormal(var)`` or ``constant(value)``."""

    kind: str = "constant"
    a: float = 1.0
    b: float = 1.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, float(self.a))
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        if self.kind == "lognormal":
            s2 = math.log1p(self.a)
            return np.exp(rng.normal(-s2 / 2, math.sqrt(s2), size))
        raise ValueError(f"unknown theta law {self.kind!r}")


def default_laws() -> dict[str, ThetaLaw]:
    return {
        "1": ThetaLaw("uniform", 0.7, 0.8),
        "2": ThetaLaw("uniform", 1.2, 1.3),
        "3": ThetaLaw("constant", 1.0),
    }


def default_sizes() -> dict[str, int]:
    return {"1": 5_000, "2": 500, "3": 94_500}


@dataclass(frozen=True)
class SimConfig:
    ages: tuple[int, int] = (16, 85)
    years: tuple[int, int] = (1980, 2021)
    entry_age: int = 0
    cohort_size: dict = field(default_factory=default_sizes)
    theta_law: dict = field(default_factory=default_laws)
    baseline: object = field(default_factory=GompertzBaseline)
    seed: int = 2024

    def __post_init__(self):
        if self.entry_age > self.ages[0]:
            raise ValueError("entry_age must not exceed the first tabulated age")
        if set(self.cohort_size) != set(self.theta_law):
            raise ValueError("cohort_size and theta_law must name the same sub-populations")
        if "0" in self.cohort_size:
            raise ValueError('population id "0" is reserved for the super-population')
        if any(v < 0 for v in self.cohort_size.values()):
            raise ValueError("cohort sizes must be non-negative")


@dataclass(frozen=True)
class SimOutput:
    config: SimConfig
    raw: dict
    tables: dict
    theta: dict

    @property
    def populations(self) -> list[str]:
        return sorted(self.tables)

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(list(self.tables.values()), out_dir / "mortality.csv")
        with (out_dir / "theta_true.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("population", "age", "theta"))
            a0, a1 = self.config.ages
            for pop in sorted(self.theta):
                for age in range(a0, a1 + 1):
                    w.writerow((pop, age, repr(float(self.theta[pop][age - self.config.entry_age]))))


def _stream(seed: int, *key: int) -> np.random.Generator:
    # counter-based generator keyed by (seed, population, cohort)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**64, *key])))


def simulate(config: SimConfig = SimConfig()) -> SimOutput:
    """Simulate all sub-populations and their aggregate; deterministic given ``config.seed``."""
    a0, a1 = config.ages
    t0, t1 = config.years
    e = config.entry_age
    # lives are needed for ages a0..a1+1 and years t0..t1+1
    sim_ages = np.arange(e, a1 + 2)
    first_cohort = t0 - (a1 + 1)
    last_cohort = t1 + 1 - a0
    sim_years = np.arange(first_cohort + e, t1 + 2)
    delta = config.baseline(sim_ages, sim_years)
    if not np.all(np.isfinite(delta)):
        raise ValueError("baseline log-odds must be finite")

    raw, tables, thetas = {}, {}, {}
    for pop_no, pop in enumerate(sorted(config.cohort_size), start=1):
        theta = config.theta_law[pop].draw(_stream(config.seed, pop_no, 0), sim_ages.size)
        if np.any(theta <= 0):
            raise ValueError(f"theta draws for population {pop} must be positive")
        q = death_prob(delta, theta[:, None])
        lives = np.zeros((a1 + 2 - a0, t1 + 2 - t0))
        deaths = np.zeros_like(lives)
        size = int(config.cohort_size[pop])
        for c in range(first_cohort, last_cohort + 1):
            rng = _stream(config.seed, pop_no, 1 + c - first_cohort)
            n = size
            for k, age in enumerate(sim_ages):
                year = c + age
                if year > t1 + 1:
                    break
                d = rng.binomial(n, q[k, year - sim_years[0]]) if n > 0 else 0
                if age >= a0 and year >= t0:
                    lives[age - a0, year - t0] = n
                    deaths[age - a0, year - t0] = d
                n -= d
        r = RawLivesTable(pop, np.arange(a0, a1 + 2), np.arange(t0, t1 + 2), lives, deaths)
        raw[pop] = r
        tables[pop] = lexis_convert(r)
        thetas[pop] = theta
    tables["0"] = aggregate([tables[p] for p in sorted(config.cohort_size)], population="0")
    return SimOutput(config=config, raw=raw, tables=tables, theta=thetas)
