"""Prediction error of the credibility predictor and of the benchmark models."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gapc
from .forecast import forecast_indices, simulate_index, predictor_moments
from .table import MortalityTable


@dataclass(frozen=True)
class MSEPDecomposition:
    """MSEP = var_mu_theta + z^2 mu_bar^2 var_theta_hat + cross_term.

    ``cross_term`` is -2 z mu_bar^2 Cov(theta_hat, Theta) for the exact form
    and zero for the form that treats theta_hat as independent of Theta.
    """

    var_mu_theta: float
    var_theta_hat: float
    cross_term: float
    z: float
    mu_bar: float
    sigma2_bar: float
    msep: float
    form: str


def msep_closed_form(mu_bar, sigma2_bar, var_theta, z, weights, form: str = "exact") -> MSEPDecomposition:
    """Closed-form MSEP of the credibility predictor at one age and horizon.

    Parameters
    ----------
    mu_bar, sigma2_bar : float
        Conditional mean and variance of the future global rate.
    var_theta : float
        Var(Theta).
    z : float
        Credibility weight in [0, 1].
    weights : array_like
        In-sample expected deaths E_t mu_t.
    form : {"exact", "independent"}
        ``"exact"`` accounts for theta_hat sharing Theta across years and with
        the target: Var(theta_hat) = V + 1/S1 and Cov(theta_hat, Theta) = V.
        ``"independent"`` uses Var(theta_hat) = V S2/S1^2 + 1/S1 and no
        covariance with the target.
    """
    w = np.asarray(weights, dtype=float)
    s1 = float(w.sum())
    if not s1 > 0:
        raise ValueError("sum of E*mu must be positive (theta_hat undefined)")
    if var_theta < 0 or sigma2_bar < 0:
        raise ValueError("variances must be non-negative")
    if not 0 <= z <= 1:
        raise ValueError("z must lie in [0, 1]")
    var_mu_theta = sigma2_bar * (var_theta + 1) + mu_bar**2 * var_theta
    if form == "exact":
        var_hat = var_theta + 1 / s1
        cross = -2 * z * mu_bar**2 * var_theta
    elif form == "independent":
        var_hat = var_theta * float(np.sum(w**2)) / s1**2 + 1 / s1
        cross = 0.0
    else:
        raise ValueError(f"unknown form {form!r}")
    total = var_mu_theta + z**2 * mu_bar**2 * var_hat + cross
    return MSEPDecomposition(
        var_mu_theta=var_mu_theta,
        var_theta_hat=var_hat,
        cross_term=cross,
        z=float(z),
        mu_bar=float(mu_bar),
        sigma2_bar=float(sigma2_bar),
        msep=max(total, 0.0),
        form=form,
    )


def draw_theta(rng: np.random.Generator, var_theta: float, size, law: str = "lognormal") -> np.ndarray:
    """Mean-one random effects with variance ``var_theta``."""
    if var_theta == 0:
        return np.ones(size)
    if law == "lognormal":
        s2 = math.log1p(var_theta)
        return np.exp(rng.normal(-s2 / 2, math.sqrt(s2), size))
    if law == "two_point":
        if var_theta >= 1:
            raise ValueError("symmetric two-point law needs var_theta < 1")
        sd = math.sqrt(var_theta)
        return np.where(rng.random(size) < 0.5, 1 - sd, 1 + sd)
    raise ValueError(f"unknown law {law!r}")


def draw_rate(rng: np.random.Generator, mu_bar: float, sigma2_bar: float, size) -> np.ndarray:
    """Lognormal future rates with mean mu_bar and variance sigma2_bar."""
    if sigma2_bar == 0:
        return np.full(size, float(mu_bar))
    s2 = math.log1p(sigma2_bar / mu_bar**2)
    return np.exp(rng.normal(math.log(mu_bar) - s2 / 2, math.sqrt(s2), size))


@dataclass(frozen=True)
class MonteCarloMSEP:
    estimate: float
    std_error: float
    n_sims: int


def msep_monte_carlo(mu_bar, sigma2_bar, var_theta, weights, z=None, n_sims: int = 1_000_000, seed: int = 0,
                     law: str = "lognormal", chunk: int = 250_000) -> MonteCarloMSEP:
    """Empirical MSEP of the credibility predictor by direct simulation.

    Each replication draws Theta, the future global rate and in-sample
    Poisson deaths with means Theta E_t mu_t, recomputes theta_hat and the
    predictor, and records the squared error against mu_future * Theta.
    ``z`` defaults to the credibility weight implied by ``var_theta``.
    """
    if n_sims < 10_000:
        raise ValueError("n_sims must be at least 10 000")
    w = np.asarray(weights, dtype=float)
    s1 = float(w.sum())
    if z is None:
        z = s1 * var_theta / (1 + s1 * var_theta) if var_theta > 0 else 0.0
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    while done < n_sims:
        m = min(chunk, n_sims - done)
        theta = draw_theta(rng, var_theta, m, law)
        mu = draw_rate(rng, mu_bar, sigma2_bar, m)
        deaths = rng.poisson(theta[:, None] * w[None, :]).sum(axis=1)
        theta_hat = deaths / s1
        err = (mu * theta - mu_bar * (1 + z * (theta_hat - 1))) ** 2
        total += float(err.sum())
        total_sq += float((err**2).sum())
        done += m
    mean = total / n_sims
    var = max(total_sq / n_sims - mean**2, 0.0)
    return MonteCarloMSEP(estimate=mean, std_error=math.sqrt(var / n_sims), n_sims=n_sims)


def poisson_bounds(mu_cred, exposure):
    """Analytic one-standard-deviation band of D/E for D ~ Poisson(E mu)."""
    mu = np.asarray(mu_cred, dtype=float)
    E = np.asarray(exposure, dtype=float)
    if np.any(E <= 0):
        raise ValueError("exposure must be positive")
    half = np.sqrt(mu / E)
    return mu - half, mu + half


def poisson_predictive_bounds(mu_cred, exposure, n_sims: int = 100_000, seed: int = 0):
    """Simulated mean +/- one standard deviation of D/E with D ~ Poisson(E mu_cred)."""
    mu = np.asarray(mu_cred, dtype=float)
    E = np.asarray(exposure, dtype=float)
    if np.any(E <= 0):
        raise ValueError("exposure must be positive")
    rng = np.random.default_rng(seed)
    F = rng.poisson(np.broadcast_to(E * mu, (n_sims,) + np.broadcast(mu, E).shape)) / E
    m, s = F.mean(axis=0), F.std(axis=0)
    return m - s, m + s


# ----------------------------------------------------------------------
# residual bootstrap for a separately fitted GAPC model


def deviance_residuals(D, fitted) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(D > 0, D * np.log(D / fitted), 0.0) - (D - fitted)
    return np.sign(D - fitted) * np.sqrt(np.maximum(2 * unit, 0.0))


def invert_deviance_residuals(r, fitted, iters: int = 200) -> np.ndarray:
    """Pseudo counts whose deviance residual against ``fitted`` equals ``r``.

    The residual is increasing in the count, so each cell is solved by
    bisection. Residuals below the value reachable at zero deaths map to 0.
    """
    r = np.asarray(r, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    lo = np.zeros_like(r)
    hi = fitted + 2 * np.abs(r) * np.sqrt(fitted) + r * r + 1.0
    for _ in range(60):
        short = deviance_residuals(hi, fitted) < r
        if not np.any(short):
            break
        hi = np.where(short, 2 * hi, hi)
    floor = deviance_residuals(np.zeros_like(r), fitted)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = deviance_residuals(mid, fitted) < r
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-12 * np.maximum(hi, 1.0)):
            break
    out = 0.5 * (lo + hi)
    return np.where(r <= floor, 0.0, out)


@dataclass(frozen=True)
class BootstrapMSEP:
    """Bootstrap MSEP of a GAPC forecast, arrays indexed [age, horizon-1]."""

    ages: np.ndarray
    years: np.ndarray
    point: np.ndarray
    msep: np.ndarray
    n_used: int
    n_dropped: int
    unreliable: bool


def _point_forecast(fc, h) -> np.ndarray:
    fit = fc.fit
    out = np.empty((fit.ages.size, h))
    for i, x in enumerate(fit.ages):
        for j in range(h):
            out[i, j] = math.exp(predictor_moments(fc, int(x), j + 1)[0])
    return out


def _simulated_rates(fc, h, rng) -> np.ndarray:
    fit = fc.fit
    kappa = simulate_index(fc.kappa_model, fit.kappa, h, rng)[0]
    b = np.ones(fit.ages.size) if fit.beta is None else fit.beta
    eta = fit.alpha[:, None] + b[:, None] * kappa[None, :]
    if fit.gamma is not None:
        gamma_path = simulate_index(fc.gamma_model, fit.gamma, h, rng)[0]
        ext = np.concatenate([fit.gamma, gamma_path])
        c0 = int(fit.cohorts[0])
        cohort = (int(fit.years[-1]) + np.arange(1, h + 1))[None, :] - fit.ages[:, None]
        eta = eta + ext[cohort - c0]
    return np.exp(eta)


def bootstrap_msep_benchmark(fit: gapc.FittedGAPC, table: MortalityTable, h: int, B: int = 200, seed: int = 0,
                             max_drop: float = 0.2) -> BootstrapMSEP:
    """Residual-bootstrap MSEP of a GAPC model's rate forecasts.

    Deviance residuals are resampled with replacement, mapped back to
    pseudo death counts (floored at zero), the model is refitted and a
    forecast path of its indices simulated. The MSEP is the variance of the
    bootstrapped rates plus their squared bias against the point forecast.
    Refits that fail to converge are dropped; more than ``max_drop`` of
    ``B`` dropped flags the result as unreliable.
    """
    if B < 200:
        raise ValueError("the bootstrap needs B >= 200 replications")
    if h < 1:
        raise ValueError("horizon must be >= 1")
    obs = table.observed
    fitted = np.where(obs, table.exposure * fit.rates(), 0.0)
    resid = deviance_residuals(table.deaths, fitted)[obs]
    fc = forecast_indices(fit, h)
    point = _point_forecast(fc, h)
    seeds = np.random.SeedSequence(seed).spawn(B)
    sims = []
    dropped = 0
    spec = gapc.GAPCSpec(fit.family)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        r_star = rng.choice(resid, size=resid.size, replace=True)
        deaths = np.zeros_like(fitted)
        deaths[obs] = invert_deviance_residuals(r_star, fitted[obs])
        pseudo = MortalityTable(table.population, table.ages, table.years, table.exposure, deaths)
        try:
            refit = gapc.fit(pseudo, spec, init=fit)
            bfc = forecast_indices(refit, h)
        except (gapc.FitError, ValueError):
            dropped += 1
            continue
        if not refit.converged:
            dropped += 1
            continue
        sims.append(_simulated_rates(bfc, h, rng))
    if not sims:
        raise RuntimeError("every bootstrap refit failed")
    sims = np.stack(sims)
    msep = sims.var(axis=0) + (sims.mean(axis=0) - point) ** 2
    return BootstrapMSEP(
        ages=fit.ages.copy(),
        years=np.arange(fit.years[-1] + 1, fit.years[-1] + h + 1),
        point=point,
        msep=msep,
        n_used=len(sims),
        n_dropped=dropped,
        unreliable=dropped > max_drop * B,
    )


MSEP_HEADER = ("population", "age", "horizon", "msep", "var_mu_theta", "var_theta_hat", "z", "method")


def write_msep_csv(rows, path) -> None:
    """``rows`` are dicts keyed by :data:`MSEP_HEADER`."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=MSEP_HEADER, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
