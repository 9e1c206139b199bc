"""Poisson maximum-likelihood fitting of GAPC mortality predictors.

Supported families (log-scale predictors)::

    LC   alpha_x + beta_x kappa_t                 sum beta = 1, sum kappa = 0
    APC  alpha_x + kappa_t + gamma_{t-x}          sum gamma = 0, sum c gamma_c = 0, sum kappa = 0
    RH   alpha_x + beta_x kappa_t + gamma_{t-x}   sum beta = 1, sum kappa = 0, sum gamma = 0

Parameters are estimated by cyclic block-Newton sweeps over the blocks
alpha, kappa, beta, gamma. Every block is separable across its components,
so each component takes its own Newton step with step-halving, which makes
the deviance non-increasing from sweep to sweep.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .table import MortalityTable

log = logging.getLogger(__name__)

TOL = 1e-8
MAX_SWEEPS = 10_000


class Family(str, Enum):
    LC = "LC"
    APC = "APC"
    RH = "RH"


@dataclass(frozen=True)
class GAPCSpec:
    family: Family = Family.LC
    tol: float = TOL
    max_sweeps: int = MAX_SWEEPS

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))

    @property
    def has_beta(self) -> bool:
        return self.family in (Family.LC, Family.RH)

    @property
    def has_cohort(self) -> bool:
        return self.family in (Family.APC, Family.RH)

    @property
    def n_constraints(self) -> int:
        return {Family.LC: 2, Family.APC: 3, Family.RH: 3}[self.family]


class FitError(RuntimeError):
    """Raised when the likelihood stops being finite during fitting."""

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


@dataclass(frozen=True)
class FittedGAPC:
    family: Family
    ages: np.ndarray
    years: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray | None
    kappa: np.ndarray
    gamma: np.ndarray | None
    loglik: float
    deviance: float
    n_cells: int
    converged: bool
    n_iter: int
    deviance_path: tuple = field(default=(), repr=False, compare=False)

    @property
    def cohorts(self) -> np.ndarray:
        return np.arange(self.years[0] - self.ages[-1], self.years[-1] - self.ages[0] + 1)

    @property
    def n_params(self) -> int:
        k = self.ages.size + self.years.size
        if self.beta is not None:
            k += self.ages.size
        if self.gamma is not None:
            k += self.cohorts.size
        return k - GAPCSpec(self.family).n_constraints

    @property
    def bic(self) -> float:
        return bic_value(self.loglik, self.n_params, self.n_cells)

    def log_rates(self) -> np.ndarray:
        """In-sample linear predictor on the fitted age x year grid."""
        return _predictor(self.alpha, self.beta, self.kappa, self.gamma, _cohort_index(self.ages, self.years))

    def rates(self) -> np.ndarray:
        return np.exp(self.log_rates())

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in a]

        return {
            "family": self.family.value,
            "ages": [int(a) for a in self.ages],
            "years": [int(y) for y in self.years],
            "cohorts": [int(c) for c in self.cohorts],
            "alpha": arr(self.alpha),
            "beta": arr(self.beta),
            "kappa": arr(self.kappa),
            "gamma": arr(self.gamma),
            "loglik": float(self.loglik),
            "deviance": float(self.deviance),
            "bic": float(self.bic),
            "n_cells": int(self.n_cells),
            "n_params": int(self.n_params),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedGAPC":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)

        return cls(
            family=Family(d["family"]),
            ages=np.asarray(d["ages"], dtype=int),
            years=np.asarray(d["years"], dtype=int),
            alpha=arr(d["alpha"]),
            beta=arr(d["beta"]),
            kappa=arr(d["kappa"]),
            gamma=arr(d["gamma"]),
            loglik=float(d["loglik"]),
            deviance=float(d["deviance"]),
            n_cells=int(d["n_cells"]),
            converged=bool(d["converged"]),
            n_iter=int(d["n_iter"]),
        )

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def bic_value(loglik: float, n_params: int, n_cells: int) -> float:
    return -2.0 * loglik + n_params * math.log(n_cells)


def bic(fit: FittedGAPC, table: MortalityTable | None = None) -> float:
    """BIC = -2 loglik + k log n, n the number of observed cells of ``table``."""
    n = fit.n_cells if table is None else int(np.count_nonzero(table.observed))
    return bic_value(fit.loglik, fit.n_params, n)


def _cohort_index(ages: np.ndarray, years: np.ndarray) -> np.ndarray:
    # cohort t - x mapped to 0..C-1, oldest cohort first
    return (years[None, :] - ages[:, None]) - (years[0] - ages[-1])


def _predictor(alpha, beta, kappa, gamma, cidx) -> np.ndarray:
    eta = alpha[:, None] + (kappa[None, :] if beta is None else beta[:, None] * kappa[None, :])
    if gamma is not None:
        eta = eta + gamma[cidx]
    return eta


def predict_mu(fit: FittedGAPC, x, t):
    """In-sample fitted rate exp(predictor) at ages ``x`` and years ``t``."""
    x = np.asarray(x)
    t = np.asarray(t)
    if np.any((x < fit.ages[0]) | (x > fit.ages[-1])) or np.any((t < fit.years[0]) | (t > fit.years[-1])):
        raise ValueError(
            f"(age, year) outside fitted range ages {fit.ages[0]}..{fit.ages[-1]}, years "
            f"{fit.years[0]}..{fit.years[-1]}; use credmort.forecast for out-of-sample years"
        )
    i = (x - fit.ages[0]).astype(int)
    j = (t - fit.years[0]).astype(int)
    eta = fit.alpha[i]
    eta = eta + (fit.kappa[j] if fit.beta is None else fit.beta[i] * fit.kappa[j])
    if fit.gamma is not None:
        eta = eta + fit.gamma[(t - x) - (fit.years[0] - fit.ages[-1])]
    out = np.exp(eta)
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------
# likelihood pieces over stacked populations: D, E, w have shape (P, X, T)


def _loglik(eta, D, E, w) -> float:
    mu = np.exp(eta)[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(D > 0, D * np.log(np.where(w, E, 1.0) * mu), 0.0) - E * mu - gammaln(D + 1)
    return float(np.sum(np.where(w, term, 0.0)))


def _deviance(eta, D, E, w) -> float:
    fitted = E * np.exp(eta)[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (fitted - D) / np.where(D > 0, D, 1.0)
        unit = np.where(D > 0, D * (r - np.log1p(r)), fitted)
    return float(2.0 * np.sum(np.where(w, unit, 0.0)))


def _component_loglik(eta, Dsum, Esum, index, n):
    # sum over cells mapped to each component of D*eta - E*exp(eta)
    contrib = Dsum * eta - Esum * np.exp(eta)
    return np.bincount(index.ravel(), weights=contrib.ravel(), minlength=n)


def _newton_block(param, loading, index, eta, D, E, w, Dsum, Esum, max_halvings=40):
    """One Newton step per component of ``param`` with per-component step-halving.

    ``eta`` depends on the block as ``eta = rest + loading * param[index]``.
    """
    n = param.size
    fitted = np.sum(np.where(w, E, 0.0) * np.exp(eta)[None], axis=0)
    resid = np.sum(np.where(w, D, 0.0) - np.where(w, E, 0.0) * np.exp(eta)[None], axis=0)
    g = np.bincount(index.ravel(), weights=(loading * resid).ravel(), minlength=n)
    h = np.bincount(index.ravel(), weights=(loading**2 * fitted).ravel(), minlength=n)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(h > 0, g / h, 0.0)
    step = np.clip(step, -5.0, 5.0)
    base = _component_loglik(eta, Dsum, Esum, index, n)
    # differences below rounding of the summed terms are not a decrease
    slack = 64 * np.finfo(float).eps * np.bincount(
        index.ravel(), weights=(np.abs(Dsum * eta) + Esum * np.exp(eta)).ravel(), minlength=n)
    for _ in range(max_halvings):
        cand = eta + loading * step[index]
        with np.errstate(over="ignore", invalid="ignore"):
            new = _component_loglik(cand, Dsum, Esum, index, n)
        worse = ~(new >= base - slack) & (step != 0)
        if not np.any(worse):
            break
        step = np.where(worse, step / 2.0, step)
    else:
        step = np.where(worse, 0.0, step)
    return param + step, eta + loading * step[index]


def _project(family, alpha, beta, kappa, gamma, ages, years, cohorts):
    """Apply identification constraints; leaves the predictor unchanged."""
    alpha, kappa = alpha.copy(), kappa.copy()
    beta = None if beta is None else beta.copy()
    gamma = None if gamma is None else gamma.copy()
    if family is Family.APC:
        c = cohorts.astype(float)
        X = np.column_stack([np.ones_like(c), c])
        phi = np.linalg.lstsq(X, gamma, rcond=None)[0]
        gamma -= X @ phi
        # gamma_{t-x} lost phi0 + phi1 (t - x)
        alpha += phi[0] - phi[1] * ages
        kappa += phi[1] * years
        m = kappa.mean()
        kappa -= m
        alpha += m
        return alpha, beta, kappa, gamma
    s = beta.sum()
    if s != 0 and np.isfinite(s):
        beta /= s
        kappa *= s
    m = kappa.mean()
    kappa -= m
    alpha += beta * m
    if family is Family.RH:
        g = gamma.mean()
        gamma -= g
        alpha += g
    return alpha, beta, kappa, gamma


def _stack(tables) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(tables, MortalityTable):
        tables = [tables]
    tables = list(tables)
    if not tables:
        raise ValueError("need at least one table")
    ages, years = tables[0].ages, tables[0].years
    for t in tables[1:]:
        if not (np.array_equal(t.ages, ages) and np.array_equal(t.years, years)):
            raise ValueError("stacked tables must share the same age and year grid")
    D = np.stack([t.deaths for t in tables])
    E = np.stack([t.exposure for t in tables])
    return ages, years, D, E


def fit(
    tables: MortalityTable | Sequence[MortalityTable],
    spec: GAPCSpec | str = GAPCSpec(),
    init: FittedGAPC | None = None,
) -> FittedGAPC:
    """Fit a GAPC predictor by Poisson maximum likelihood.

    ``tables`` is one table or several tables on the same grid sharing one
    rate surface (stacked likelihood). Convergence is declared when the
    absolute change in deviance between sweeps falls below ``spec.tol``.
    """
    if not isinstance(spec, GAPCSpec):
        spec = GAPCSpec(Family(spec))
    family = spec.family
    ages, years, D, E = _stack(tables)
    w = E > 0
    if ages.size < 3 or years.size < 3:
        raise ValueError("need at least 3 ages and 3 years")
    any_cell = np.any(w, axis=0)
    if not np.all(np.any(any_cell, axis=1)):
        raise ValueError(f"age {ages[~np.any(any_cell, axis=1)][0]} has no cell with positive exposure")
    if not np.all(np.any(any_cell, axis=0)):
        raise ValueError(f"year {years[~np.any(any_cell, axis=0)][0]} has no cell with positive exposure")

    Dsum = np.sum(np.where(w, D, 0.0), axis=0)
    Esum = np.sum(np.where(w, E, 0.0), axis=0)
    X, T = ages.size, years.size
    cohorts = np.arange(years[0] - ages[-1], years[-1] - ages[0] + 1)
    cidx = _cohort_index(ages, years)
    xidx = np.broadcast_to(np.arange(X)[:, None], (X, T))
    tidx = np.broadcast_to(np.arange(T)[None, :], (X, T))
    ones = np.ones((X, T))

    if init is not None:
        alpha = init.alpha.copy()
        beta = None if init.beta is None else init.beta.copy()
        kappa = init.kappa.copy()
        gamma = None if init.gamma is None else init.gamma.copy()
    else:
        with np.errstate(divide="ignore"):
            alpha = np.log(Dsum.sum(axis=1) / Esum.sum(axis=1))
        alpha = np.where(np.isfinite(alpha), alpha, np.log(max(Dsum.sum(), 0.5) / Esum.sum()))
        beta = np.full(X, 1.0 / X) if spec.has_beta else None
        kappa = np.zeros(T)
        gamma = np.zeros(cohorts.size) if spec.has_cohort else None

    eta = _predictor(alpha, beta, kappa, gamma, cidx)
    dev = _deviance(eta, D, E, w)
    if not math.isfinite(dev):
        raise FitError("non-finite deviance at the starting values")
    path = [dev]
    converged = False
    sweep = 0
    for sweep in range(1, spec.max_sweeps + 1):
        last = (alpha, beta, kappa, gamma)
        alpha, eta = _newton_block(alpha, ones, xidx, eta, D, E, w, Dsum, Esum)
        loading = ones if beta is None else np.broadcast_to(beta[:, None], (X, T))
        kappa, eta = _newton_block(kappa, loading, tidx, eta, D, E, w, Dsum, Esum)
        if beta is not None:
            beta, eta = _newton_block(beta, np.broadcast_to(kappa[None, :], (X, T)), xidx, eta, D, E, w, Dsum, Esum)
        if gamma is not None:
            gamma, eta = _newton_block(gamma, ones, cidx, eta, D, E, w, Dsum, Esum)
        alpha, beta, kappa, gamma = _project(family, alpha, beta, kappa, gamma, ages, years, cohorts)
        eta = _predictor(alpha, beta, kappa, gamma, cidx)
        new = _deviance(eta, D, E, w)
        if not (math.isfinite(new) and np.all(np.isfinite(eta))):
            raise FitError(
                f"non-finite likelihood at sweep {sweep}; last finite deviance {dev:.6g}",
                last_params=dict(zip(("alpha", "beta", "kappa", "gamma"), last)),
            )
        path.append(new)
        change = abs(dev - new)
        dev = new
        if change < spec.tol:
            converged = True
            break
    if not converged:
        log.info("%s fit did not converge in %d sweeps (deviance %.6g)", family.value, sweep, dev)
    return FittedGAPC(
        family=family,
        ages=ages.copy(),
        years=years.copy(),
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        gamma=gamma,
        loglik=_loglik(eta, D, E, w),
        deviance=dev,
        n_cells=int(np.count_nonzero(w)),
        converged=converged,
        n_iter=sweep,
        deviance_path=tuple(path),
    )
