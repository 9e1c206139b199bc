"""Age-period mortality tables, Lexis exposure conversion and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("population", "age", "year", "exposure", "deaths")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_contiguous(values: np.ndarray, name: str) -> None:
    if values.ndim != 1 or values.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d range")
    if np.any(np.diff(values) != 1):
        raise ValueError(f"{name} must be a contiguous integer range, got {values.tolist()}")


@dataclass(frozen=True)
class MortalityTable:
    """Exposures and deaths on a rectangular age x year grid for one population.

    Arrays are indexed ``[age, year]`` and are read-only after construction.
    Cells with zero exposure are treated as missing (see :attr:`observed`).
    """

    population: str
    ages: np.ndarray
    years: np.ndarray
    exposure: np.ndarray
    deaths: np.ndarray

    def __post_init__(self):
        ages = _frozen(self.ages, int)
        years = _frozen(self.years, int)
        exposure = _frozen(self.exposure)
        deaths = _frozen(self.deaths)
        _check_contiguous(ages, "ages")
        _check_contiguous(years, "years")
        shape = (ages.size, years.size)
        if exposure.shape != shape or deaths.shape != shape:
            raise ValueError(
                f"exposure {exposure.shape} and deaths {deaths.shape} must both have shape {shape}"
            )
        if not (np.all(np.isfinite(exposure)) and np.all(np.isfinite(deaths))):
            raise ValueError("exposure and deaths must be finite")
        if np.any(exposure < 0) or np.any(deaths < 0):
            raise ValueError("exposure and deaths must be non-negative")
        object.__setattr__(self, "population", str(self.population))
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "exposure", exposure)
        object.__setattr__(self, "deaths", deaths)

    @property
    def shape(self) -> tuple[int, int]:
        return self.exposure.shape

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask of cells with positive exposure."""
        return self.exposure > 0

    @property
    def crude_rate(self) -> np.ndarray:
        """D/E, NaN where exposure is zero."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.observed, self.deaths / np.where(self.observed, self.exposure, 1.0), np.nan)

    def age_index(self, age: int) -> int:
        i = int(age) - int(self.ages[0])
        if not 0 <= i < self.ages.size:
            raise KeyError(f"age {age} outside {self.ages[0]}..{self.ages[-1]}")
        return i

    def year_index(self, year: int) -> int:
        j = int(year) - int(self.years[0])
        if not 0 <= j < self.years.size:
            raise KeyError(f"year {year} outside {self.years[0]}..{self.years[-1]}")
        return j

    def subset(self, ages: Sequence[int] | None = None, years: Sequence[int] | None = None) -> "MortalityTable":
        """Restrict to inclusive ``(first, last)`` age and/or year ranges."""
        a0, a1 = (self.ages[0], self.ages[-1]) if ages is None else ages
        y0, y1 = (self.years[0], self.years[-1]) if years is None else years
        ia = slice(self.age_index(a0), self.age_index(a1) + 1)
        iy = slice(self.year_index(y0), self.year_index(y1) + 1)
        return MortalityTable(
            self.population,
            self.ages[ia],
            self.years[iy],
            self.exposure[ia, iy],
            self.deaths[ia, iy],
        )

    def relabel(self, population: str) -> "MortalityTable":
        return MortalityTable(population, self.ages, self.years, self.exposure, self.deaths)

    def equals(self, other: "MortalityTable") -> bool:
        return (
            self.population == other.population
            and np.array_equal(self.ages, other.ages)
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.exposure, other.exposure)
            and np.array_equal(self.deaths, other.deaths)
        )


@dataclass(frozen=True)
class RawLivesTable:
    """Lives at exact age x on 1 January of year t, for closed cohorts.

    ``raw_deaths[x, t]`` holds the deaths of the cohort aged x at the start
    of year t during that year (one Lexis parallelogram). It is optional and
    not used by :func:`lexis_convert`.
    """

    population: str
    ages: np.ndarray
    years: np.ndarray
    lives: np.ndarray
    raw_deaths: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "ages", _frozen(self.ages, int))
        object.__setattr__(self, "years", _frozen(self.years, int))
        object.__setattr__(self, "lives", _frozen(self.lives))
        if self.raw_deaths is not None:
            object.__setattr__(self, "raw_deaths", _frozen(self.raw_deaths))
        _check_contiguous(self.ages, "ages")
        _check_contiguous(self.years, "years")
        if self.lives.shape != (self.ages.size, self.years.size):
            raise ValueError("lives must have shape (len(ages), len(years))")
        if np.any(self.lives < 0) or not np.all(np.isfinite(self.lives)):
            raise ValueError("lives must be finite and non-negative")


def lexis_convert(raw: RawLivesTable) -> MortalityTable:
    """Central exposures and deaths from lives counts on the Lexis diagram.

    Deaths are assumed uniform over each yearly parallelogram, giving
    ``E[x,t] = (N[x,t] + N[x+1,t+1]) / 2`` and ``D[x,t] = (N[x,t] - N[x+1,t+1]) / 2``.
    The last age and the last year of ``raw`` have no successor cell and are dropped.
    """
    n = raw.lives
    if n.shape[0] < 2 or n.shape[1] < 2:
        raise ValueError("need at least two ages and two years of lives")
    start, end = n[:-1, :-1], n[1:, 1:]
    grown = end > start
    if np.any(grown):
        i, j = np.argwhere(grown)[0]
        raise ValueError(
            "cohort grows from (age {}, year {}) to (age {}, year {}): lives must be non-increasing "
            "along cohorts (closed cohorts, no migration)".format(
                raw.ages[i], raw.years[j], raw.ages[i] + 1, raw.years[j] + 1
            )
        )
    return MortalityTable(
        raw.population,
        raw.ages[:-1],
        raw.years[:-1],
        start / 2 + end / 2,
        (start - end) / 2,
    )


def aggregate(tables: Sequence[MortalityTable], population: str = "0") -> MortalityTable:
    """Cell-wise sum of deaths and exposures over populations on a common grid."""
    tables = list(tables)
    if not tables:
        raise ValueError("need at least one table")
    first = tables[0]
    for t in tables[1:]:
        if not np.array_equal(t.ages, first.ages):
            raise ValueError(
                f"age grid mismatch: population {t.population!r} has ages "
                f"{t.ages[0]}..{t.ages[-1]}, expected {first.ages[0]}..{first.ages[-1]}"
            )
        if not np.array_equal(t.years, first.years):
            raise ValueError(
                f"year grid mismatch: population {t.population!r} has years "
                f"{t.years[0]}..{t.years[-1]}, expected {first.years[0]}..{first.years[-1]}"
            )
    exposure = np.sum([t.exposure for t in tables], axis=0)
    deaths = np.sum([t.deaths for t in tables], axis=0)
    return MortalityTable(population, first.ages, first.years, exposure, deaths)


def _fmt(v: float) -> str:
    # repr of a Python float round-trips exactly
    v = float(v)
    return repr(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def write_csv(tables: MortalityTable | Iterable[MortalityTable], path) -> None:
    """Write one or several tables in long format, sorted by population, age, year."""
    if isinstance(tables, MortalityTable):
        tables = [tables]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for tab in sorted(tables, key=lambda t: t.population):
            for i, age in enumerate(tab.ages):
                for j, year in enumerate(tab.years):
                    w.writerow([tab.population, int(age), int(year), _fmt(tab.exposure[i, j]), _fmt(tab.deaths[i, j])])


def _parse_rows(path) -> dict[str, dict[tuple[int, int], tuple[float, float]]]:
    out: dict[str, dict[tuple[int, int], tuple[float, float]]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}: row {rowno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            pop = row[0].strip()
            try:
                age, year = int(row[1]), int(row[2])
                exposure, deaths = float(row[3]), float(row[4])
            except ValueError:
                raise ValueError(f"{path}: row {rowno}: non-numeric field in {row}") from None
            if not (math.isfinite(exposure) and math.isfinite(deaths)):
                raise ValueError(f"{path}: row {rowno}: non-finite value")
            cells = out.setdefault(pop, {})
            if (age, year) in cells:
                raise ValueError(f"{path}: row {rowno}: duplicate cell population={pop} age={age} year={year}")
            cells[(age, year)] = (exposure, deaths)
    if not out:
        raise ValueError(f"{path}: no data rows")
    return out


def _build(pop: str, cells: dict, path) -> MortalityTable:
    ages = sorted({a for a, _ in cells})
    years = sorted({y for _, y in cells})
    ages = np.arange(ages[0], ages[-1] + 1)
    years = np.arange(years[0], years[-1] + 1)
    exposure = np.empty((ages.size, years.size))
    deaths = np.empty_like(exposure)
    for i, a in enumerate(ages):
        for j, y in enumerate(years):
            try:
                exposure[i, j], deaths[i, j] = cells[(int(a), int(y))]
            except KeyError:
                raise ValueError(f"{path}: missing cell population={pop} age={a} year={y}") from None
    return MortalityTable(pop, ages, years, exposure, deaths)


def read_csv_all(path) -> dict[str, MortalityTable]:
    """Read every population in a long-format CSV file."""
    parsed = _parse_rows(path)
    return {pop: _build(pop, cells, path) for pop, cells in sorted(parsed.items())}


def read_csv(path, population: str | None = None) -> MortalityTable:
    """Read a single population; ``population`` is required if the file holds several."""
    tables = read_csv_all(path)
    if population is None:
        if len(tables) != 1:
            raise ValueError(f"{path}: file holds populations {sorted(tables)}; pass population=")
        return next(iter(tables.values()))
    try:
        return tables[str(population)]
    except KeyError:
        raise ValueError(f"{path}: population {population!r} not found (have {sorted(tables)})") from None
