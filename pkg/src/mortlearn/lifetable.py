"""Life expectancy, annuities, provisions and closed-group exposure projection.

Conventions
-----------
* ``q = 1 - exp(-m)`` (constant force of mortality within each year of age).
* The terminal age ``omega`` (default 100) has ``q = 1``. When rates stop
  short of ``omega`` the log-rates of the last five ages are continued
  linearly up to ``omega``.
* Annuities pay 1 at the end of every year survived.
* Dynamic (forecast) bases follow the cohort diagonal: a life aged ``x`` at
  valuation year ``t0`` experiences ``q[x + k, t0 + k]`` in its ``k``-th year.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError

OMEGA = 100


def rates_to_q(m):
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DataError("mortality rates must be nonnegative")
    return -np.expm1(-m)


@dataclass(frozen=True)
class LifeTableSlice:
    """One-year death probabilities for ages ``ages[0]..omega``."""

    ages: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=int)
        q = np.asarray(self.q, dtype=float)
        if ages.shape != q.shape or len(ages) == 0:
            raise DataError("ages and q must be non-empty and of equal length")
        if np.any(np.diff(ages) != 1):
            raise DataError("ages must be consecutive")
        if np.any((q < 0) | (q > 1)) or not np.all(np.isfinite(q)):
            raise DataError("q must lie in [0, 1]")
        if q[-1] != 1.0:
            raise DataError("q at the terminal age must be 1")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "q", q)

    @property
    def omega(self):
        return int(self.ages[-1])

    @classmethod
    def from_rates(cls, ages, m, omega=OMEGA):
        ages_ext, m_ext = extend_to_omega(ages, np.asarray(m, dtype=float)[:, None], omega)
        q = rates_to_q(m_ext[:, 0])
        q[-1] = 1.0
        return cls(ages_ext, q)

    def survival(self, x):
        """``k``-year survival probabilities from age ``x`` for ``k = 1..omega-x``."""
        i = self._index(x)
        return np.cumprod(1.0 - self.q[i:])[: self.omega - int(x)]

    def _index(self, x):
        if not self.ages[0] <= x <= self.omega:
            raise DataError(f"age {x} outside {self.ages[0]}..{self.omega}")
        return int(x) - int(self.ages[0])


def extend_to_omega(ages, m, omega=OMEGA, n_fit=5):
    """Continue ``m`` (shape ``(ages, columns)``) log-linearly in age up to ``omega``.

    Each column is extended from a least-squares line through the log-rates of
    its last ``n_fit`` ages. Columns with a zero rate there repeat their last
    value instead.
    """
    ages = np.asarray(ages, dtype=int)
    m = np.asarray(m, dtype=float)
    top = int(ages[-1])
    if top > omega:
        raise DataError(f"rates extend beyond terminal age {omega}")
    if top == omega:
        return ages, m.copy()
    extra = np.arange(top + 1, omega + 1)
    fit_ages = ages[-n_fit:]
    tail = m[-n_fit:]
    ext = np.empty((len(extra), m.shape[1]))
    for j in range(m.shape[1]):
        col = tail[:, j]
        if len(col) >= 2 and np.all(col > 0) and np.all(np.isfinite(col)):
            slope, icpt = np.polyfit(fit_ages, np.log(col), 1)
            ext[:, j] = np.exp(icpt + slope * extra)
        else:
            ext[:, j] = m[-1, j]
    return np.concatenate([ages, extra]), np.vstack([m, ext])


def life_expectancy(table, x):
    """``e_x = 1/2 + sum_{k>=1} kp_x`` (curtate expectation plus half a year)."""
    return 0.5 + float(np.sum(table.survival(x)))


@dataclass(frozen=True)
class AnnuityConfig:
    interest: float = 0.05

    def __post_init__(self):
        if not self.interest > -1:
            raise DataError("interest rate must exceed -1")

    @property
    def v(self):
        return 1.0 / (1.0 + self.interest)


def annuity_value(table, x, cfg=AnnuityConfig()):
    """Present value of 1 per year paid in arrears while alive."""
    surv = table.survival(x)
    disc = cfg.v ** np.arange(1, len(surv) + 1)
    return float(np.sum(disc * surv))


# -----------------------------------------------------------------------------
# dynamic (forecast) basis


def _gender_q_grid(surface, g, omega):
    ages_ext, m_ext = extend_to_omega(surface.ages, surface.m[g], omega)
    q = rates_to_q(np.nan_to_num(m_ext, nan=-1.0).clip(min=0.0))
    q[np.isnan(m_ext)] = np.nan
    q[-1, :] = 1.0
    return ages_ext, q


def hold_last_year(surface, last_year):
    """Extend ``surface`` to ``last_year`` by repeating its final year's rates.

    Cohort diagonals from a valuation age of 60 need about 40 calendar years
    of rates, far past any sensible forecast horizon.
    """
    out = surface
    final = np.array(surface.m[:, :, -1])
    while int(out.years[-1]) < int(last_year):
        out = out.append_year(final)
    return out


def cohort_path(surface, g, x, start_year, omega=OMEGA):
    """``q[x + k, start_year + k]`` for ``k = 0..omega - x`` along one diagonal."""
    ages_ext, q = _gender_q_grid(surface, g, omega)
    years = surface.years
    out = []
    for k in range(omega - int(x) + 1):
        age, year = int(x) + k, int(start_year) + k
        ai, yi = age - int(ages_ext[0]), year - int(years[0])
        if not (0 <= yi < len(years)) or not (0 <= ai < len(ages_ext)) or np.isnan(q[ai, yi]):
            raise DataError(f"forecast surface lacks a rate for ({surface.genders[g]}, {age}, {year})")
        out.append(q[ai, yi])
    return np.array(out)


def cohort_table(surface, g, x, start_year, omega=OMEGA):
    return LifeTableSlice(np.arange(int(x), omega + 1), cohort_path(surface, g, x, start_year, omega))


def aggregate_provision(exposure, surface, valuation_year, cfg=AnnuityConfig(), ages=None,
                        omega=OMEGA):
    """Sum of ``E_x * a_x`` over ages with cohort-diagonal survival.

    ``exposure`` has shape ``(genders, len(ages))``; ``ages`` defaults to the
    surface ages. Returns per-gender values plus ``"total"``.
    """
    ages = surface.ages if ages is None else np.asarray(ages, dtype=int)
    exposure = np.asarray(exposure, dtype=float)
    if exposure.shape != (len(surface.genders), len(ages)):
        raise DataError(f"exposure must have shape {(len(surface.genders), len(ages))}")
    if np.any(exposure < 0):
        raise DataError("exposure must be nonnegative")
    out = {}
    for g, gender in enumerate(surface.genders):
        total = 0.0
        for x, e in zip(ages, exposure[g]):
            if e == 0:
                continue
            total += float(e) * annuity_value(cohort_table(surface, g, x, valuation_year, omega), x, cfg)
        out[gender] = float(total)
    out["total"] = sum(out[g] for g in surface.genders)
    return out


def static_provision(exposure, ages, table, cfg=AnnuityConfig()):
    """``sum E_x * a_x`` on one static life table."""
    return float(sum(e * annuity_value(table, x, cfg) for x, e in zip(ages, exposure) if e))


def period_life_expectancy(surface, years, x=60, omega=OMEGA):
    """Rows ``(year, e_x per gender...)`` from each calendar year's rates."""
    rows = []
    for year in years:
        t = surface.year_index(year)
        row = [int(year)]
        for g in range(len(surface.genders)):
            row.append(life_expectancy(LifeTableSlice.from_rates(surface.ages, surface.m[g, :, t], omega), x))
        rows.append(tuple(row))
    return rows


# -----------------------------------------------------------------------------
# closed-group projection


@dataclass(frozen=True)
class CashFlowProjection:
    """Projected exposure ``[gender, age, year]``; column 0 is the base year."""

    ages: np.ndarray
    years: np.ndarray
    exposure: np.ndarray
    genders: tuple

    def totals(self, ages=None):
        """Total exposure per year (all genders), optionally over an age subset."""
        E = self.exposure
        if ages is not None:
            mask = np.isin(self.ages, ages)
            E = E[:, mask]
        return E.sum(axis=(0, 1))


def project_exposure(base_exposure, surface, base_year, horizon, ages=None, omega=OMEGA):
    """Closed-group roll-forward ``E[x+1, t+1] = E[x, t] * (1 - q[x, t])``.

    With ``omega=None`` the surface ages are used as is and lives passing the
    top age leave the grid; otherwise rates are extended to ``omega`` where
    ``q = 1``.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    base = np.asarray(base_exposure, dtype=float)
    src_ages = surface.ages if ages is None else np.asarray(ages, dtype=int)
    if base.shape != (len(surface.genders), len(src_ages)):
        raise DataError(f"base exposure must have shape {(len(surface.genders), len(src_ages))}")
    if np.any(base < 0):
        raise DataError("base exposure must be nonnegative")
    if omega is None:
        grid_ages = surface.ages
        qs = [rates_to_q(np.where(surface.missing[g], 0.0, surface.m[g])) for g in range(len(surface.genders))]
        for g in range(len(qs)):
            qs[g][surface.missing[g]] = np.nan
    else:
        pairs = [_gender_q_grid(surface, g, omega) for g in range(len(surface.genders))]
        grid_ages = pairs[0][0]
        qs = [p[1] for p in pairs]
    a0 = int(grid_ages[0])
    E = np.zeros((len(surface.genders), len(grid_ages), horizon + 1))
    for x, col in zip(src_ages, range(base.shape[1])):
        E[:, int(x) - a0, 0] = base[:, col]
    years = np.arange(int(base_year), int(base_year) + horizon + 1)
    for k in range(horizon):
        yi = int(years[k]) - int(surface.years[0])
        for g, gender in enumerate(surface.genders):
            alive = np.flatnonzero(E[g, :-1, k] > 0)
            if len(alive) and not 0 <= yi < len(surface.years):
                raise DataError(f"forecast surface lacks year {years[k]} for {gender}")
            for ai in alive:
                q = qs[g][ai, yi]
                if np.isnan(q):
                    raise DataError(
                        f"forecast surface lacks a rate for ({gender}, {int(grid_ages[ai])}, {int(years[k])})"
                    )
                E[g, ai + 1, k + 1] = E[g, ai, k] * (1.0 - q)
    return CashFlowProjection(np.asarray(grid_ages), years, E, surface.genders)


def compare_projection(observed, projection, band_width=5, min_age=None, genders=None):
    """Relative differences ``(projected - observed) / observed`` by age band.

    ``observed`` is a :class:`MortalityDataset`; years and ages common to both
    inputs are compared (the projection's base year is skipped). Returns rows
    ``(gender, year, band_label, projected, observed, relative_difference)``
    with ``None`` as the difference for bands with zero observed exposure.
    Per-gender ``"all"`` bands and an overall ``"total"`` row are appended.
    """
    genders = projection.genders if genders is None else tuple(genders)
    years = [int(y) for y in projection.years[1:] if observed.years[0] <= y <= observed.years[-1]]
    ages = [int(a) for a in projection.ages if observed.ages[0] <= a <= observed.ages[-1]
            and (min_age is None or a >= min_age)]
    if not years or not ages:
        raise DataError("observed data and projection do not overlap")
    lo = ages[0]

    def rel(p, o):
        return None if o == 0 else (p - o) / o

    rows = []
    grand_p = grand_o = 0.0
    for gender in genders:
        g = projection.genders.index(gender)
        go = observed.genders.index(gender)
        for year in years:
            k = year - int(projection.years[0])
            t = observed.year_index(year)
            bands = {}
            for a in ages:
                label = lo + ((a - lo) // band_width) * band_width
                p = projection.exposure[g, a - int(projection.ages[0]), k]
                o = observed.exposure[go, observed.age_index(a), t]
                bp, bo = bands.get(label, (0.0, 0.0))
                bands[label] = (bp + float(p), bo + float(o))
            for label, (p, o) in bands.items():
                rows.append((gender, year, f"{label}-{label + band_width - 1}", p, o, rel(p, o)))
            tp = sum(v[0] for v in bands.values())
            to = sum(v[1] for v in bands.values())
            rows.append((gender, year, "all", tp, to, rel(tp, to)))
            grand_p += tp
            grand_o += to
    rows.append(("all", None, "total", grand_p, grand_o, rel(grand_p, grand_o)))
    return rows


def load_static_table(path, omega=None):
    """Read ``age,q`` rows into a :class:`LifeTableSlice`.

    The last age is forced to ``q = 1`` unless it already is; with ``omega``
    set, the table is truncated there.
    """
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append((int(row["age"]), float(row["q"])))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: row {lineno} unparseable ({exc})") from None
    rows.sort()
    if omega is not None:
        rows = [r for r in rows if r[0] <= omega]
    if not rows:
        raise DataError(f"{path}: no rows")
    ages = np.array([r[0] for r in rows])
    q = np.array([r[1] for r in rows])
    q[-1] = 1.0
    return LifeTableSlice(ages, q)
