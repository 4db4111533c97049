"""Poisson Lee-Carter model fitted by maximum likelihood.

Deaths are Poisson with mean ``E * exp(a_x + b_x * k_t)``. Parameters are
normalized so that ``sum(b) == 1`` and ``sum(k) == 0``; the period index is
projected as a random walk with drift.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from pathlib import Path

import numpy as np

from .data import record_access
from .exceptions import ConvergenceError, DataError, ModelError

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class LeeCarterParams:
    ages: np.ndarray
    years: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kappa: np.ndarray
    gender: str = "M"
    drift: float | None = None
    sigma: float | None = None
    loglik_trace: tuple = ()

    def log_rates(self):
        return self.a[:, None] + self.b[:, None] * self.kappa[None, :]

    def to_dict(self):
        return {
            "kind": "leecarter",
            "gender": self.gender,
            "ages": [int(v) for v in self.ages],
            "years": [int(v) for v in self.years],
            "a": [float(v) for v in self.a],
            "b": [float(v) for v in self.b],
            "kappa": [float(v) for v in self.kappa],
            "drift": self.drift,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["ages"]), np.array(d["years"]), np.array(d["a"]),
                   np.array(d["b"]), np.array(d["kappa"]), d["gender"], d["drift"], d["sigma"])


def _saturated_terms(D, E, w):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(D > 0, D * np.log(np.where(D > 0, D, 1.0) / np.where(w, E, 1.0)), 0.0) - D
    return np.where(w, t, 0.0)


def _cell_loglik(D, E, w, mu, sat):
    # Poisson log-likelihood minus its saturated value; same maximizer, small magnitude
    with np.errstate(over="ignore"):
        return np.where(w, D * mu - E * np.exp(mu), 0.0) - sat


def _damped_newton(coord, grad, hess, ll_of, axis_sum):
    """Per-coordinate Newton step, halved until that coordinate's share of
    the log-likelihood does not decrease."""
    step = np.where(hess > 0, grad / np.where(hess > 0, hess, 1.0), 0.0)
    base = axis_sum(ll_of(coord))
    out = coord.copy()
    pending = step != 0
    for _ in range(60):
        if not np.any(pending):
            break
        trial = np.where(pending, coord + step, out)
        gain = axis_sum(ll_of(trial)) - base
        ok = pending & np.isfinite(gain) & (gain >= 0)
        out = np.where(ok, trial, out)
        pending &= ~ok
        step = step * 0.5
    return out


def fit_leecarter(ds, gender="M", tol=1e-10, max_sweeps=500):
    """Fit ``a``, ``b`` and ``kappa`` for one gender.

    Alternating damped Newton updates on ``a``, then ``b``, then ``kappa``
    until the log-likelihood gain of a sweep drops below ``tol``.
    Zero-exposure cells are left out of the likelihood.
    """
    g = ds.genders.index(gender)
    D = np.asarray(ds.deaths[g], dtype=float)
    E = np.asarray(ds.exposure[g], dtype=float)
    record_access("leecarter", ds.years)
    w = E > 0
    if not np.all(w):
        warnings.warn(f"{int((~w).sum())} zero-exposure cells excluded from the Lee-Carter fit",
                      stacklevel=2)
    n_ages, n_years = D.shape
    if np.any(w.sum(axis=1) == 0) or np.any(w.sum(axis=0) == 0):
        raise DataError("every age and every year needs at least one exposed cell")
    deaths_by_age = np.where(w, D, 0).sum(axis=1)
    if np.any(deaths_by_age == 0):
        bad = ds.ages[deaths_by_age == 0].tolist()
        raise DataError(f"ages {bad} have no deaths; log-rate level is not estimable")

    sat = _saturated_terms(D, E, w)
    a = np.log(deaths_by_age / np.where(w, E, 0).sum(axis=1))

    if n_years == 1:
        a = np.log(D[:, 0] / E[:, 0])
        b = np.full(n_ages, 1.0 / n_ages)
        kappa = np.zeros(1)
        ll = float(_cell_loglik(D, E, w, a[:, None], sat).sum())
        return LeeCarterParams(ds.ages, ds.years, a, b, kappa, gender, loglik_trace=(ll,))

    # rank-1 start from the centred log-rates
    Y = np.log((np.where(w, D, 0) + 0.5) / np.where(w, E, 1.0))
    R = np.where(w, Y - a[:, None], 0.0)
    U, S, Vt = np.linalg.svd(R, full_matrices=False)
    b = U[:, 0]
    kappa = S[0] * Vt[0]
    if abs(b.sum()) < 1e-8:
        b = np.full(n_ages, 1.0 / n_ages)
        kappa = R.sum(axis=0)
    else:
        s = b.sum()
        b, kappa = b / s, kappa * s

    def loglik(a_, b_, k_):
        return _cell_loglik(D, E, w, a_[:, None] + b_[:, None] * k_[None, :], sat)

    trace = [float(loglik(a, b, kappa).sum())]
    for _ in range(max_sweeps):
        mu = a[:, None] + b[:, None] * kappa[None, :]
        resid = np.where(w, D - E * np.exp(mu), 0.0)
        fitted = np.where(w, E * np.exp(mu), 0.0)
        a = _damped_newton(a, resid.sum(1), fitted.sum(1),
                           lambda v: loglik(v, b, kappa), lambda m: m.sum(1))

        mu = a[:, None] + b[:, None] * kappa[None, :]
        fitted = np.where(w, E * np.exp(mu), 0.0)
        resid = np.where(w, D, 0.0) - fitted
        b = _damped_newton(b, (resid * kappa).sum(1), (fitted * kappa**2).sum(1),
                           lambda v: loglik(a, v, kappa), lambda m: m.sum(1))

        mu = a[:, None] + b[:, None] * kappa[None, :]
        fitted = np.where(w, E * np.exp(mu), 0.0)
        resid = np.where(w, D, 0.0) - fitted
        kappa = _damped_newton(kappa, (resid * b[:, None]).sum(0),
                               (fitted * b[:, None] ** 2).sum(0),
                               lambda v: loglik(a, b, v), lambda m: m.sum(0))

        trace.append(float(loglik(a, b, kappa).sum()))
        if trace[-1] - trace[-2] < tol:
            break
    else:
        raise ConvergenceError(
            f"Lee-Carter fit for {gender} did not converge in {max_sweeps} sweeps", trace)

    a, b, kappa = normalize(a, b, kappa)
    if not np.all(np.isfinite(a[:, None] + b[:, None] * kappa[None, :])):
        raise ModelError("non-finite fitted log-rates")
    logger.debug("Lee-Carter %s converged after %d sweeps", gender, len(trace) - 1)
    return LeeCarterParams(ds.ages, ds.years, a, b, kappa, gender, loglik_trace=tuple(trace))


def normalize(a, b, kappa):
    """Impose ``sum(b) = 1`` and ``sum(kappa) = 0`` without changing ``a + b*kappa``."""
    s = b.sum()
    if s == 0:
        raise ModelError("sum of b is zero; constraint cannot be imposed")
    kbar = kappa.mean()
    return a + b * kbar, b / s, (kappa - kbar) * s


def estimate_drift(params):
    """Random-walk drift ``(k_T - k_1) / (T - 1)`` and innovation spread."""
    k = np.asarray(params.kappa, dtype=float)
    if len(k) < 2:
        raise DataError("drift needs at least two kappa values")
    d = (k[-1] - k[0]) / (len(k) - 1)
    shocks = np.diff(k) - d
    sigma = float(np.std(shocks, ddof=1)) if len(shocks) > 1 else 0.0
    return dataclasses.replace(params, drift=float(d), sigma=sigma)


def forecast_kappa(params, horizon, n_paths=0, seed=0):
    """Central path ``k_T + h*d`` for ``h = 1..horizon``.

    With ``n_paths > 0`` also returns simulated paths of shape
    ``(n_paths, horizon)`` with normal innovations of spread ``sigma``.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if params.drift is None:
        raise ModelError("drift not estimated; call estimate_drift first")
    steps = np.arange(1, horizon + 1)
    central = params.kappa[-1] + steps * params.drift
    if n_paths <= 0:
        return central
    rng = np.random.default_rng(seed)
    shocks = rng.normal(params.drift, params.sigma or 0.0, size=(n_paths, horizon))
    return central, params.kappa[-1] + np.cumsum(shocks, axis=1)


def kappa_for_years(params, years):
    years = np.atleast_1d(np.asarray(years, dtype=int))
    first, last = int(params.years[0]), int(params.years[-1])
    if np.any(years < first):
        raise DataError(f"years before {first} are outside the fitted range")
    out = np.empty(len(years))
    inside = years <= last
    out[inside] = params.kappa[years[inside] - first]
    if np.any(~inside):
        horizon = int(years.max()) - last
        path = forecast_kappa(params, horizon)
        out[~inside] = path[years[~inside] - last - 1]
    return out


def lc_predict_rates(params, years):
    """Rates ``exp(a_x + b_x * k_t)`` with shape ``(ages, len(years))``."""
    k = kappa_for_years(params, years)
    return np.exp(params.a[:, None] + params.b[:, None] * k[None, :])


def write_leecarter(params, prefix):
    """Write ``<prefix>_ages.csv``, ``<prefix>_kappa.csv`` and ``<prefix>_scalars.csv``."""
    prefix = Path(prefix)
    with open(f"{prefix}_ages.csv", "w", encoding="utf-8") as fh:
        fh.write("age,a,b\n")
        for x, a, b in zip(params.ages, params.a, params.b):
            fh.write(f"{int(x)},{float(a)!r},{float(b)!r}\n")
    with open(f"{prefix}_kappa.csv", "w", encoding="utf-8") as fh:
        fh.write("year,kappa\n")
        for t, k in zip(params.years, params.kappa):
            fh.write(f"{int(t)},{float(k)!r}\n")
    with open(f"{prefix}_scalars.csv", "w", encoding="utf-8") as fh:
        fh.write("name,value\n")
        fh.write(f"drift,{params.drift!r}\nsigma,{params.sigma!r}\n")
