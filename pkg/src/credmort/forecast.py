"""ARIMA(p,1,q) models for mortality indices and forecast moments of the rate.

Only the candidates (0,1,0), (1,1,0) and (0,1,1), each with drift, are
considered. Parameters are estimated by conditional sum of squares on the
differenced series; the model with the smallest BIC is selected. BIC values
are computed on a common effective sample (all differences but the first)
so that the three candidates are comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .gapc import FittedGAPC

ORDERS = ((0, 1, 0), (1, 1, 0), (0, 1, 1))
_EDGE = 0.999


@dataclass(frozen=True)
class IndexModel:
    order: tuple
    drift: float
    ar: float
    ma: float
    sigma2: float
    bic: float
    n_obs: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["order"] = list(self.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IndexModel":
        return cls(**{**d, "order": tuple(d["order"])})


@dataclass(frozen=True)
class IndexForecast:
    """Gaussian predictive moments of an index for horizons 1..h."""

    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class RateForecast:
    """Conditional mean and variance of future rates, arrays indexed [age, horizon-1]."""

    ages: np.ndarray
    years: np.ndarray
    mu_bar: np.ndarray
    sigma2_bar: np.ndarray
    mode: str = "lognormal"

    @property
    def horizon(self) -> int:
        return self.years.size


def _ma_residuals(y: np.ndarray, c: float, theta: float) -> np.ndarray:
    e = np.empty_like(y)
    prev = 0.0
    for i, v in enumerate(y):
        prev = v - c - theta * prev
        e[i] = prev
    return e


def _ma_profile(y: np.ndarray, theta: float) -> tuple[float, np.ndarray]:
    # e_t = a_t - c b_t is linear in the drift, so the drift is profiled out
    a = _ma_residuals(y, 0.0, theta)
    b = np.empty_like(y)
    prev = 0.0
    for i in range(y.size):
        prev = 1.0 - theta * prev
        b[i] = prev
    c = float(a @ b / (b @ b))
    return c, a - c * b


def _gaussian_bic(resid: np.ndarray, k: int) -> tuple[float, float]:
    n = resid.size
    s2 = float(resid @ resid) / n
    if s2 <= 1e-300:
        return 0.0, -math.inf
    return s2, n * math.log(2 * math.pi * s2) + n + k * math.log(n)


def _residuals(order, y, drift, ar, ma) -> np.ndarray:
    if order == (0, 1, 0):
        return y - drift
    if order == (1, 1, 0):
        return (y[1:] - drift) - ar * (y[:-1] - drift)
    return _ma_residuals(y, drift, ma)


def _fit_order(order, y: np.ndarray) -> IndexModel | None:
    drift = ar = ma = 0.0
    if order == (0, 1, 0):
        drift = float(y.mean())
    elif order == (1, 1, 0):
        X = np.column_stack([np.ones(y.size - 1), y[:-1]])
        (a, ar), *_ = np.linalg.lstsq(X, y[1:], rcond=None)
        if not abs(ar) < 1:
            return None
        drift = float(a / (1 - ar))
        ar = float(ar)
    elif order == (0, 1, 1):
        grid = np.linspace(-0.98, 0.98, 99)
        rss = [float(np.sum(_ma_profile(y, th)[1] ** 2)) for th in grid]
        i = int(np.argmin(rss))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        if i == 0:
            lo = -_EDGE
        if i == grid.size - 1:
            hi = _EDGE
        res = minimize_scalar(lambda th: float(np.sum(_ma_profile(y, th)[1] ** 2)), bounds=(lo, hi), method="bounded")
        ma = float(res.x) if res.fun <= rss[i] else float(grid[i])
        drift = _ma_profile(y, ma)[0]
    else:
        raise ValueError(f"unsupported order {order}")
    resid = _residuals(order, y, drift, ar, ma)
    # common effective sample: drop the first difference
    resid = resid[-(y.size - 1):]
    k = 2 if order == (0, 1, 0) else 3
    s2, b = _gaussian_bic(resid, k)
    return IndexModel(order=tuple(order), drift=drift, ar=ar, ma=ma, sigma2=s2, bic=b, n_obs=int(y.size))


def fit_index(series: Sequence[float], candidate_orders: Sequence[tuple] = ORDERS) -> IndexModel:
    """Select the minimum-BIC ARIMA(p,1,q)-with-drift model for ``series``."""
    series = np.asarray(series, dtype=float)
    if series.size < 5:
        raise ValueError(f"index series needs at least 5 values, got {series.size}")
    if not np.all(np.isfinite(series)):
        raise ValueError("index series contains non-finite values")
    y = np.diff(series)
    if np.all(y == y[0]):
        return IndexModel(order=(0, 1, 0), drift=float(y[0]), ar=0.0, ma=0.0, sigma2=0.0, bic=-math.inf, n_obs=int(y.size))
    best = None
    for order in candidate_orders:
        m = _fit_order(tuple(order), y)
        if m is not None and (best is None or m.bic < best.bic):
            best = m
    if best is None:
        raise ValueError("no admissible candidate model")
    return best


def forecast_index(model: IndexModel, last_values: Sequence[float], h: int) -> IndexForecast:
    """Exact Gaussian h-step predictive moments, parameters treated as known.

    ``last_values`` is the observed index series the model was fitted on
    (at least its last two values for AR models; the full series for MA).
    """
    if h < 1:
        raise ValueError("forecast horizon must be >= 1")
    z = np.asarray(last_values, dtype=float)
    level = z[-1]
    steps = np.arange(1, h + 1)
    s2 = model.sigma2
    if model.order == (0, 1, 0):
        mean = level + steps * model.drift
        var = steps * s2
    elif model.order == (1, 1, 0):
        phi, c = model.ar, model.drift
        dev = z[-1] - z[-2] - c
        powers = phi ** steps
        mean = level + steps * c + dev * np.cumsum(powers)
        psi = (1 - powers) / (1 - phi)
        var = s2 * np.cumsum(psi**2)
    elif model.order == (0, 1, 1):
        th, c = model.ma, model.drift
        e_last = _ma_residuals(np.diff(z), c, th)[-1]
        mean = level + steps * c + th * e_last
        var = s2 * (1 + (steps - 1) * (1 + th) ** 2)
    else:
        raise ValueError(f"unsupported order {model.order}")
    return IndexForecast(mean=np.asarray(mean, float), var=np.asarray(var, float))


def simulate_index(model: IndexModel, last_values: Sequence[float], h: int, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Simulated index paths of shape (n, h) from the fitted model."""
    z = np.asarray(last_values, dtype=float)
    e = rng.normal(0.0, math.sqrt(model.sigma2), size=(n, h))
    c = model.drift
    if model.order == (0, 1, 0):
        dy = c + e
    elif model.order == (1, 1, 0):
        dy = np.empty_like(e)
        prev = np.full(n, z[-1] - z[-2])
        for j in range(h):
            prev = c + model.ar * (prev - c) + e[:, j]
            dy[:, j] = prev
    else:
        prev_e = np.full(n, _ma_residuals(np.diff(z), c, model.ma)[-1])
        dy = np.empty_like(e)
        for j in range(h):
            dy[:, j] = c + e[:, j] + model.ma * prev_e
            prev_e = e[:, j]
    return z[-1] + np.cumsum(dy, axis=1)


def lognormal_moments(mean, var, mode: str = "lognormal"):
    """Mean and variance of exp(N(mean, var)); ``mode='plugin'`` uses exp(mean) as the mean."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if mode == "lognormal":
        mu_bar = np.exp(mean + var / 2)
    elif mode == "plugin":
        mu_bar = np.exp(mean)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    sigma2 = np.expm1(var) * np.exp(2 * mean + var)
    return mu_bar, sigma2


@dataclass(frozen=True)
class GlobalForecast:
    """Index models and their forecasts for a fitted GAPC model."""

    fit: FittedGAPC
    kappa_model: IndexModel
    kappa: IndexForecast
    gamma_model: IndexModel | None
    gamma: IndexForecast | None

    def to_dict(self) -> dict:
        out = {"kappa": {"model": self.kappa_model.to_dict(), "mean": self.kappa.mean.tolist(), "var": self.kappa.var.tolist()}}
        if self.gamma_model is not None:
            out["gamma"] = {"model": self.gamma_model.to_dict(), "mean": self.gamma.mean.tolist(), "var": self.gamma.var.tolist()}
        return out


def forecast_indices(fit: FittedGAPC, h: int, orders: Sequence[tuple] = ORDERS, frozen: dict | None = None) -> GlobalForecast:
    """Fit index models to the period (and cohort) indices and forecast h steps.

    ``frozen`` optionally maps ``"kappa"``/``"gamma"`` to an order to use
    instead of BIC re-selection.
    """
    frozen = frozen or {}
    km = fit_index(fit.kappa, [frozen["kappa"]] if "kappa" in frozen else orders)
    kf = forecast_index(km, fit.kappa, h)
    gm = gf = None
    if fit.gamma is not None:
        gm = fit_index(fit.gamma, [frozen["gamma"]] if "gamma" in frozen else orders)
        gf = forecast_index(gm, fit.gamma, h)
    return GlobalForecast(fit, km, kf, gm, gf)


def predictor_moments(fc: GlobalForecast, x: int, h: int) -> tuple[float, float]:
    """Mean and variance of the Gaussian log-rate at age ``x``, ``h`` years ahead.

    The log-rate is a + b_kappa * kappa + b_gamma * gamma with independent
    index forecasts; known cohorts contribute their fitted gamma to ``a``.
    """
    fit = fc.fit
    if h < 1 or h > fc.kappa.mean.size:
        raise ValueError(f"horizon {h} outside 1..{fc.kappa.mean.size}")
    i = int(x) - int(fit.ages[0])
    if not 0 <= i < fit.ages.size:
        raise ValueError(f"age {x} outside fitted ages")
    b = 1.0 if fit.beta is None else float(fit.beta[i])
    mean = float(fit.alpha[i]) + b * fc.kappa.mean[h - 1]
    var = b * b * fc.kappa.var[h - 1]
    if fit.gamma is not None:
        cohort = int(fit.years[-1]) + h - int(x)
        last = int(fit.cohorts[-1])
        if cohort <= last:
            mean += float(fit.gamma[cohort - int(fit.cohorts[0])])
        else:
            k = cohort - last
            mean += fc.gamma.mean[k - 1]
            var += fc.gamma.var[k - 1]
    return float(mean), float(var)


def rate_moments(fc: GlobalForecast, x: int, h: int, mode: str = "lognormal") -> tuple[float, float]:
    """(mu_bar, sigma2_bar) for age ``x`` at horizon ``h``."""
    m, v = predictor_moments(fc, x, h)
    mu, s2 = lognormal_moments(m, v, mode)
    return float(mu), float(s2)


def forecast_rates(fit: FittedGAPC, h: int, mode: str = "lognormal", orders: Sequence[tuple] = ORDERS,
                   frozen: dict | None = None) -> tuple[RateForecast, GlobalForecast]:
    fc = forecast_indices(fit, h, orders, frozen)
    mu = np.empty((fit.ages.size, h))
    s2 = np.empty_like(mu)
    for i, x in enumerate(fit.ages):
        for j in range(h):
            mu[i, j], s2[i, j] = rate_moments(fc, int(x), j + 1, mode)
    years = np.arange(fit.years[-1] + 1, fit.years[-1] + h + 1)
    return RateForecast(ages=fit.ages.copy(), years=years, mu_bar=mu, sigma2_bar=s2, mode=mode), fc
