"""Credibility blending of a global mortality forecast with sub-population data.

For each age x and sub-population i, with in-sample global rates mu[x,t]:

    theta_hat = sum_t D / sum_t E mu                    relative-risk MLE
    W         = sum_t E mu                              expected deaths
    V         = max(Var_m, 0)                           plug-in Var(Theta)
    Z         = W / (1/V + W)      (Z = 0 if V = 0)
    mu_cred   = mu_bar * (1 + Z (theta_hat - 1))

where mu_bar is the conditional mean of the future global rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cart import BinFit, cart_bin
from .table import MortalityTable


def _observed(table: MortalityTable, mu_hat):
    mu_hat = np.asarray(mu_hat, dtype=float)
    if mu_hat.shape != table.shape:
        raise ValueError(f"mu_hat shape {mu_hat.shape} does not match table {table.shape}")
    w = table.observed
    return w, np.where(w, mu_hat, 0.0)


def effective_deaths(table: MortalityTable, mu_hat) -> np.ndarray:
    """Expected deaths under the global rates, sum_t E mu, per age."""
    w, mu = _observed(table, mu_hat)
    return np.sum(np.where(w, table.exposure, 0.0) * mu, axis=1)


def theta_mle(table: MortalityTable, mu_hat) -> np.ndarray:
    """Relative-risk MLE per age; NaN where the expected deaths are zero."""
    w = effective_deaths(table, mu_hat)
    d = np.sum(np.where(table.observed, table.deaths, 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w > 0, d / np.where(w > 0, w, 1.0), np.nan)


def var_theta_plugin(table: MortalityTable, mu_hat) -> tuple[np.ndarray, np.ndarray]:
    """Moment estimator of Var(Theta) per age, raw and zero-adjusted.

    Uses sum_t mu/E as the sample-size-one estimate of the Poisson part of
    the variance of the summed crude rates.
    """
    w, mu = _observed(table, mu_hat)
    F = np.where(w, table.crude_rate, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        noise = np.sum(np.where(w, mu / np.where(w, table.exposure, 1.0), 0.0), axis=1)
    s_mu = mu.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(s_mu > 0, ((F.sum(axis=1) - s_mu) ** 2 - noise) / s_mu**2, np.nan)
    adj = np.where(np.isfinite(raw), np.maximum(raw, 0.0), 0.0)
    return raw, adj


def credibility_weight(effective_deaths, var_theta) -> np.ndarray:
    """Z = W / (1/V + W), with Z = 0 wherever V = 0 or W is not positive."""
    W = np.asarray(effective_deaths, dtype=float)
    V = np.asarray(var_theta, dtype=float)
    if np.any(V < 0):
        raise ValueError("var_theta must be non-negative")
    WV = W * V
    with np.errstate(invalid="ignore"):
        z = np.where((V > 0) & (W > 0), WV / (1.0 + WV), 0.0)
    return z if z.ndim else float(z)


def credibility_predict(mu_bar, theta_hat, z):
    """Blended rate and its scale factor.

    Returns ``(mu_cred, theta_blend)`` with ``theta_blend = 1 + Z (theta_hat - 1)``
    and ``mu_cred = mu_bar * theta_blend``. Undefined ``theta_hat`` requires Z = 0.
    """
    mu_bar = np.asarray(mu_bar, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any((z < 0) | (z > 1)):
        raise ValueError("credibility weights must lie in [0, 1]")
    if np.any(~np.isfinite(theta_hat) & (z > 0)):
        raise ValueError("undefined theta_hat with positive credibility weight")
    with np.errstate(invalid="ignore"):
        blend = np.where(z > 0, 1.0 + z * (theta_hat - 1.0), 1.0)
    mu_cred = mu_bar * blend
    if mu_cred.ndim == 0:
        return float(mu_cred), float(blend)
    return mu_cred, blend


def credibility_age_only(table: MortalityTable, mu_x, var_theta):
    """Credibility predictor when the global rate is a constant mu_x per age.

    Returns ``(prediction, z, theta_hat)`` arrays over ages.
    """
    mu_x = np.broadcast_to(np.asarray(mu_x, dtype=float), table.ages.shape)
    V = np.broadcast_to(np.asarray(var_theta, dtype=float), table.ages.shape)
    w = table.observed
    E = np.where(w, table.exposure, 0.0)
    Ex = E.sum(axis=1)
    F = np.where(w, table.crude_rate, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(Ex > 0, (E * F).sum(axis=1) / np.where(Ex > 0, Ex, 1.0) / mu_x, np.nan)
        z = np.where((V > 0) & (Ex > 0), Ex / (1.0 / (mu_x * V) + Ex), 0.0)
    pred = np.where(z > 0, (1 - z) * mu_x + z * mu_x * theta, mu_x)
    return pred, z, theta


@dataclass(frozen=True)
class ThetaEstimate:
    """Per-age credibility inputs for one sub-population."""

    population: str
    ages: np.ndarray
    theta_hat: np.ndarray
    var_theta_raw: np.ndarray
    var_theta: np.ndarray
    theta_binned: np.ndarray
    var_binned: np.ndarray
    effective_deaths: np.ndarray
    theta_bins: BinFit | None = None
    var_bins: BinFit | None = None

    def components(self, binned: bool = True):
        """(theta_hat, var_theta) used downstream, binned or raw."""
        if binned:
            return self.theta_binned, self.var_binned
        return self.theta_hat, self.var_theta

    def weights(self, binned: bool = True) -> np.ndarray:
        return credibility_weight(self.effective_deaths, self.components(binned)[1])


def estimate_components(table: MortalityTable, mu_hat, binning: bool = True, folds: int = 5, seed: int = 0) -> ThetaEstimate:
    """theta_hat, Var(Theta) and their CART-binned versions for one table."""
    theta = theta_mle(table, mu_hat)
    raw, var = var_theta_plugin(table, mu_hat)
    W = effective_deaths(table, mu_hat)
    ages = table.ages.astype(float)
    tb = vb = None
    theta_b, var_b = theta.copy(), var.copy()
    defined = np.isfinite(theta)
    if binning and np.any(defined):
        tb = cart_bin(ages[defined], theta[defined], folds=folds, seed=seed)
        vb = cart_bin(ages[defined], var[defined], folds=folds, seed=seed)
        theta_b = np.where(defined, tb.predict(ages), np.nan)
        var_b = np.where(defined, vb.predict(ages), 0.0)
    return ThetaEstimate(
        population=table.population,
        ages=table.ages.copy(),
        theta_hat=theta,
        var_theta_raw=raw,
        var_theta=var,
        theta_binned=theta_b,
        var_binned=var_b,
        effective_deaths=W,
        theta_bins=tb,
        var_bins=vb,
    )


@dataclass(frozen=True)
class CredibilityResult:
    """Blended forecasts for one sub-population; rate arrays are [age, horizon-1]."""

    population: str
    ages: np.ndarray
    years: np.ndarray
    z: np.ndarray
    theta_hat: np.ndarray
    var_theta: np.ndarray
    theta_blend: np.ndarray
    mu_global: np.ndarray
    mu_sub: np.ndarray
    mu_cred: np.ndarray


def credibility_forecast(est: ThetaEstimate, mu_bar: np.ndarray, years, binned: bool = True) -> CredibilityResult:
    """Apply the credibility predictor to global forecasts ``mu_bar[age, h]``."""
    theta, var = est.components(binned)
    z = credibility_weight(est.effective_deaths, var)
    mu_cred, blend = credibility_predict(mu_bar, theta[:, None], z[:, None])
    with np.errstate(invalid="ignore"):
        mu_sub = np.where(np.isfinite(theta)[:, None], mu_bar * theta[:, None], np.nan)
    return CredibilityResult(
        population=est.population,
        ages=est.ages,
        years=np.asarray(years),
        z=z,
        theta_hat=theta,
        var_theta=var,
        theta_blend=blend[:, 0],
        mu_global=np.asarray(mu_bar, dtype=float),
        mu_sub=mu_sub,
        mu_cred=mu_cred,
    )


CREDIBILITY_HEADER = ("population", "age", "year", "z", "theta_hat", "var_theta", "mu_global", "mu_sub", "mu_cred")


def write_credibility_csv(results, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CREDIBILITY_HEADER)
        for r in results:
            for i, age in enumerate(r.ages):
                for j, year in enumerate(r.years):
                    w.writerow([
                        r.population, int(age), int(year), repr(float(r.z[i])), repr(float(r.theta_hat[i])),
                        repr(float(r.var_theta[i])), repr(float(r.mu_global[i, j])), repr(float(r.mu_sub[i, j])),
                        repr(float(r.mu_cred[i, j])),
                    ])
