"""Death/exposure grids, mortality rates and covariate construction.

Arrays are laid out as ``[gender, age, year]`` with genders ordered
``("M", "F")``. The gender indicator used in feature vectors is 1 for
male and 0 for female.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

GENDERS = ("M", "F")
GENDER_INDICATOR = {"M": 1, "F": 0}
CANONICAL_COLUMNS = ("gender", "age", "year", "deaths", "exposure")
STATIC_FEATURES = ("age", "gender", "year")

# -----------------------------------------------------------------------------
# access auditing

_ACCESS_LOG = contextvars.ContextVar("mortlearn_access_log", default=None)


@contextlib.contextmanager
def access_log():
    """Record the calendar years read by builders and fitters in this block.

    Yields a list that receives ``(source, min_year, max_year)`` tuples.
    """
    log = []
    token = _ACCESS_LOG.set(log)
    try:
        yield log
    finally:
        _ACCESS_LOG.reset(token)


def record_access(source, years):
    log = _ACCESS_LOG.get()
    if log is None:
        return
    years = np.asarray(years)
    if years.size:
        log.append((source, int(years.min()), int(years.max())))


# -----------------------------------------------------------------------------
# core containers


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MortalityDataset:
    """Deaths and exposures on a complete (gender, age, year) grid."""

    ages: np.ndarray
    years: np.ndarray
    deaths: np.ndarray
    exposure: np.ndarray
    genders: tuple = GENDERS

    def __post_init__(self):
        object.__setattr__(self, "ages", _frozen(self.ages, int))
        object.__setattr__(self, "years", _frozen(self.years, int))
        object.__setattr__(self, "deaths", _frozen(self.deaths))
        object.__setattr__(self, "exposure", _frozen(self.exposure))
        shape = (len(self.genders), len(self.ages), len(self.years))
        if self.deaths.shape != shape or self.exposure.shape != shape:
            raise DataError(
                f"deaths/exposure must have shape {shape}, got "
                f"{self.deaths.shape} and {self.exposure.shape}"
            )
        if np.any(self.deaths < 0) or np.any(self.exposure < 0):
            raise DataError("deaths and exposure must be nonnegative")
        if not (np.all(np.isfinite(self.deaths)) and np.all(np.isfinite(self.exposure))):
            raise DataError("deaths and exposure must be finite")

    @property
    def shape(self):
        return self.deaths.shape

    @property
    def missing(self):
        return self.exposure == 0

    def year_index(self, year):
        idx = int(year) - int(self.years[0])
        if not 0 <= idx < len(self.years):
            raise DataError(f"year {year} outside {self.years[0]}..{self.years[-1]}")
        return idx

    def age_index(self, age):
        idx = int(age) - int(self.ages[0])
        if not 0 <= idx < len(self.ages):
            raise DataError(f"age {age} outside {self.ages[0]}..{self.ages[-1]}")
        return idx

    def restrict_years(self, first, last):
        i, j = self.year_index(first), self.year_index(last)
        if j < i:
            raise DataError(f"empty year range {first}..{last}")
        return MortalityDataset(
            self.ages,
            self.years[i : j + 1],
            self.deaths[:, :, i : j + 1],
            self.exposure[:, :, i : j + 1],
            self.genders,
        )

    def restrict_ages(self, first, last):
        i, j = self.age_index(first), self.age_index(last)
        return MortalityDataset(
            self.ages[i : j + 1],
            self.years,
            self.deaths[:, i : j + 1],
            self.exposure[:, i : j + 1],
            self.genders,
        )


@dataclass(frozen=True)
class RateSurface:
    """Central mortality rates ``m = D / E``; ``m`` is NaN where ``missing``."""

    ages: np.ndarray
    years: np.ndarray
    m: np.ndarray
    missing: np.ndarray
    genders: tuple = GENDERS

    def __post_init__(self):
        object.__setattr__(self, "ages", _frozen(self.ages, int))
        object.__setattr__(self, "years", _frozen(self.years, int))
        missing = np.asarray(self.missing, dtype=bool)
        m = np.array(self.m, dtype=float)
        m[missing] = np.nan
        object.__setattr__(self, "m", _frozen(m))
        object.__setattr__(self, "missing", _frozen(missing, bool))
        if np.any(np.isnan(self.m) & ~self.missing):
            raise DataError("rate surface has NaN rates on non-missing cells")
        if np.any(self.m[~self.missing] < 0):
            raise DataError("rates must be nonnegative")

    @property
    def shape(self):
        return self.m.shape

    def year_index(self, year):
        idx = int(year) - int(self.years[0])
        if not 0 <= idx < len(self.years):
            raise DataError(f"year {year} outside {self.years[0]}..{self.years[-1]}")
        return idx

    def age_index(self, age):
        idx = int(age) - int(self.ages[0])
        if not 0 <= idx < len(self.ages):
            raise DataError(f"age {age} outside {self.ages[0]}..{self.ages[-1]}")
        return idx

    def rate(self, gender, age, year):
        g = self.genders.index(gender)
        return self.m[g, self.age_index(age), self.year_index(year)]

    def restrict_years(self, first, last):
        i, j = self.year_index(first), self.year_index(last)
        if j < i:
            raise DataError(f"empty year range {first}..{last}")
        return RateSurface(
            self.ages,
            self.years[i : j + 1],
            self.m[:, :, i : j + 1],
            self.missing[:, :, i : j + 1],
            self.genders,
        )

    def append_year(self, values):
        """Return a new surface with one more calendar year of rates.

        ``values`` has shape ``(genders, ages)``; NaN entries are flagged
        missing.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != self.m.shape[:2]:
            raise DataError(f"expected shape {self.m.shape[:2]}, got {values.shape}")
        m = np.concatenate([self.m, values[:, :, None]], axis=2)
        years = np.append(self.years, self.years[-1] + 1)
        return RateSurface(self.ages, years, m, np.isnan(m), self.genders)


# -----------------------------------------------------------------------------
# file I/O


def _parse_range(values, declared, what):
    if declared is None:
        return np.arange(min(values), max(values) + 1)
    lo, hi = declared
    if hi < lo:
        raise DataError(f"declared {what} range {lo}..{hi} is empty")
    return np.arange(lo, hi + 1)


def load_dataset(path, schema=None, ages=None, years=None, delimiter=","):
    """Read a delimited deaths/exposure file into a complete grid.

    Parameters
    ----------
    path : str or Path
        UTF-8 text with a header row.
    schema : dict, optional
        Maps canonical names (``gender, age, year, deaths, exposure``) to the
        header names used in the file.
    ages, years : (int, int), optional
        Declared inclusive ranges. Default to the span found in the file.

    Cells absent from the file get ``D = E = 0`` and are therefore flagged
    missing when rates are computed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    schema = {c: c for c in CANONICAL_COLUMNS} | dict(schema or {})
    records = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        absent = [c for c in CANONICAL_COLUMNS if schema[c] not in header]
        if absent:
            raise DataError(f"{path}: missing columns {absent} (header {header})")
        for lineno, row in enumerate(reader, start=2):
            try:
                gender = row[schema["gender"]].strip().upper()
                age = int(row[schema["age"]])
                year = int(row[schema["year"]])
                deaths = float(row[schema["deaths"]])
                exposure = float(row[schema["exposure"]])
            except (TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}: row {lineno} unparseable: {row!r} ({exc})") from None
            if gender not in GENDERS:
                raise DataError(f"{path}: row {lineno} unknown gender {gender!r}")
            if not (np.isfinite(deaths) and np.isfinite(exposure)):
                raise DataError(f"{path}: row {lineno} non-finite count")
            if deaths < 0 or exposure < 0:
                raise DataError(f"{path}: row {lineno} has a negative count")
            if deaths != int(deaths):
                raise DataError(f"{path}: row {lineno} deaths must be an integer")
            records.append((lineno, gender, age, year, deaths, exposure))
    if not records:
        raise DataError(f"{path}: no data rows")

    age_grid = _parse_range([r[2] for r in records], ages, "age")
    year_grid = _parse_range([r[3] for r in records], years, "year")
    shape = (len(GENDERS), len(age_grid), len(year_grid))
    deaths = np.zeros(shape)
    exposure = np.zeros(shape)
    seen = {}
    for lineno, gender, age, year, d, e in records:
        key = (gender, age, year)
        if key in seen:
            raise DataError(f"{path}: row {lineno} duplicates row {seen[key]} for {key}")
        seen[key] = lineno
        ai, yi = age - age_grid[0], year - year_grid[0]
        if not (0 <= ai < len(age_grid) and 0 <= yi < len(year_grid)):
            raise DataError(f"{path}: row {lineno} cell {key} outside declared ranges")
        if e == 0 and d > 0:
            warnings.warn(
                f"{path}: row {lineno} has {d:g} deaths on zero exposure; cell flagged missing",
                stacklevel=2,
            )
        g = GENDERS.index(gender)
        deaths[g, ai, yi] = d
        exposure[g, ai, yi] = e
    return MortalityDataset(age_grid, year_grid, deaths, exposure)


def write_dataset(ds, path, delimiter=","):
    """Write every grid cell (including zero-exposure ones) as delimited text."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for g, gender in enumerate(ds.genders):
            for a, age in enumerate(ds.ages):
                for t, year in enumerate(ds.years):
                    w.writerow([gender, int(age), int(year),
                                int(ds.deaths[g, a, t]), repr(float(ds.exposure[g, a, t]))])


def write_rates(rs, path, delimiter=","):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["gender", "age", "year", "rate", "missing"])
        for g, gender in enumerate(rs.genders):
            for a, age in enumerate(rs.ages):
                for t, year in enumerate(rs.years):
                    miss = bool(rs.missing[g, a, t])
                    w.writerow([gender, int(age), int(year),
                                "" if miss else repr(float(rs.m[g, a, t])), int(miss)])


def load_rates(path, delimiter=","):
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh, delimiter=delimiter), start=2):
            try:
                rate = float(row["rate"]) if row["rate"] not in ("", None) else np.nan
                rows.append((row["gender"], int(row["age"]), int(row["year"]), rate))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: row {lineno} unparseable ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    ages = np.arange(min(r[1] for r in rows), max(r[1] for r in rows) + 1)
    years = np.arange(min(r[2] for r in rows), max(r[2] for r in rows) + 1)
    m = np.full((len(GENDERS), len(ages), len(years)), np.nan)
    for gender, age, year, rate in rows:
        m[GENDERS.index(gender), age - ages[0], year - years[0]] = rate
    return RateSurface(ages, years, m, np.isnan(m))


# -----------------------------------------------------------------------------
# rates


def compute_rates(ds):
    """Central death rates ``D / E``; zero-exposure cells are flagged missing."""
    missing = ds.exposure == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(missing, np.nan, ds.deaths / np.where(missing, 1.0, ds.exposure))
    return RateSurface(ds.ages, ds.years, m, missing, ds.genders)


# -----------------------------------------------------------------------------
# supervised samples


@dataclass(frozen=True)
class SampleSet:
    """Tabular rows ``[age, gender, year, m_{x,t-1}] -> m_{x,t}``.

    ``keys`` holds ``(gender indicator, age, year)`` of each row's target.
    """

    X: np.ndarray
    y: np.ndarray
    keys: np.ndarray
    feature_names: tuple = STATIC_FEATURES + ("rate_lag1",)
    dropped: int = 0

    def __len__(self):
        return len(self.y)

    def subset(self, mask):
        return SampleSet(self.X[mask], self.y[mask], self.keys[mask], self.feature_names, self.dropped)


@dataclass(frozen=True)
class SequenceSampleSet:
    """Rows of static covariates ``[age, gender, year]`` plus a rate sequence.

    ``seq`` has shape ``(rows, steps, 1)``; steps are in chronological (or
    stacking) order with the most recent entry last.
    """

    static: np.ndarray
    seq: np.ndarray
    y: np.ndarray
    keys: np.ndarray
    variant: str
    dropped: int = 0

    def __len__(self):
        return len(self.y)

    def subset(self, mask):
        return SequenceSampleSet(self.static[mask], self.seq[mask], self.y[mask],
                                 self.keys[mask], self.variant, self.dropped)


def _gender_flags(rs):
    return np.array([GENDER_INDICATOR[g] for g in rs.genders])


def _target_year_indices(rs, target_years, min_lag):
    if target_years is None:
        return list(range(min_lag, len(rs.years)))
    out = []
    for year in target_years:
        t = rs.year_index(year)
        if t < min_lag:
            raise DataError(f"target year {year} needs {min_lag} earlier year(s)")
        out.append(t)
    return out


def build_static_samples(rs, target_years=None, require_target=True):
    """One row per cell with an observed previous-year rate.

    With ``require_target=False`` rows whose own rate is missing are kept
    with ``y = NaN``; forecasters use this to build prediction inputs.
    """
    if len(rs.years) < 2:
        raise DataError("static samples need at least two years of rates")
    flags = _gender_flags(rs)
    X, y, keys = [], [], []
    dropped = 0
    for t in _target_year_indices(rs, target_years, 1):
        year = rs.years[t]
        for g in range(len(rs.genders)):
            for a, age in enumerate(rs.ages):
                lag = rs.m[g, a, t - 1]
                target = rs.m[g, a, t]
                if np.isnan(lag) or (require_target and np.isnan(target)):
                    dropped += 1
                    continue
                X.append((age, flags[g], year, lag))
                y.append(target)
                keys.append((flags[g], age, year))
    if not y:
        raise DataError("no static samples could be built (insufficient history)")
    keys = np.array(keys, dtype=int)
    record_access("static", np.concatenate([keys[:, 2], keys[:, 2] - 1]))
    return SampleSet(np.array(X, dtype=float), np.array(y), keys, dropped=dropped)


def _sequence_set(static, seq, y, keys, variant, dropped, touched):
    if not y:
        raise DataError(f"no {variant} sequence samples could be built")
    keys = np.array(keys, dtype=int)
    record_access(variant, np.asarray(touched))
    return SequenceSampleSet(
        np.array(static, dtype=float),
        np.array(seq, dtype=float)[:, :, None],
        np.array(y, dtype=float),
        keys,
        variant,
        dropped,
    )


def build_lagged_sequences(rs, lags=2, target_years=None, require_target=True):
    """Sequences ``<m_{x,t-lags}, ..., m_{x,t-1}>`` at fixed age."""
    if lags < 1:
        raise DataError("lags must be >= 1")
    if len(rs.years) < lags + 1:
        raise DataError(f"lagged sequences need at least {lags + 1} years")
    flags = _gender_flags(rs)
    static, seq, y, keys, touched = [], [], [], [], []
    dropped = 0
    for t in _target_year_indices(rs, target_years, lags):
        year = rs.years[t]
        for g in range(len(rs.genders)):
            for a, age in enumerate(rs.ages):
                window = rs.m[g, a, t - lags : t]
                target = rs.m[g, a, t]
                if np.any(np.isnan(window)) or (require_target and np.isnan(target)):
                    dropped += 1
                    continue
                static.append((age, flags[g], year))
                seq.append(window)
                y.append(target)
                keys.append((flags[g], age, year))
                touched.append(year)
    return _sequence_set(static, seq, y, keys, "lagged", dropped, touched)


def build_cohort_sequences(rs, target_years=None, require_target=True):
    """Sequences ``<m_{x-2,t-2}, m_{x-1,t-1}>`` along the cohort diagonal."""
    if len(rs.years) < 3 or len(rs.ages) < 3:
        raise DataError("cohort sequences need at least 3 years and 3 ages")
    flags = _gender_flags(rs)
    static, seq, y, keys, touched = [], [], [], [], []
    dropped = 0
    for t in _target_year_indices(rs, target_years, 2):
        year = rs.years[t]
        for g in range(len(rs.genders)):
            for a in range(2, len(rs.ages)):
                window = np.array([rs.m[g, a - 2, t - 2], rs.m[g, a - 1, t - 1]])
                target = rs.m[g, a, t]
                if np.any(np.isnan(window)) or (require_target and np.isnan(target)):
                    dropped += 1
                    continue
                static.append((rs.ages[a], flags[g], year))
                seq.append(window)
                y.append(target)
                keys.append((flags[g], rs.ages[a], year))
                touched.append(year)
    return _sequence_set(static, seq, y, keys, "cohort", dropped, touched)


def stacked_series(rs, g):
    """Rates of gender index ``g`` flattened year-major, age-minor."""
    return rs.m[g].T.ravel()


def stacked_window(series, position, window):
    """The ``window`` entries strictly before ``position``, left-padded.

    Padding repeats the first series value; a target at the very start of
    the series has no earlier value and is padded with zeros instead.
    """
    start = position - window
    if start >= 0:
        return np.array(series[start:position], dtype=float)
    pad = series[0] if position > 0 else 0.0
    return np.concatenate([np.full(-start, pad), series[:position]])


def build_stacked_sequences(rs, window=132, target_years=None, require_target=True):
    """Sequences over the (year, then age) stacked series of each gender."""
    if window < 1:
        raise DataError("window must be >= 1")
    if rs.m.size == 0:
        raise DataError("empty rate surface")
    flags = _gender_flags(rs)
    n_ages = len(rs.ages)
    static, seq, y, keys, touched = [], [], [], [], []
    dropped = 0
    for t in _target_year_indices(rs, target_years, 0):
        year = rs.years[t]
        for g in range(len(rs.genders)):
            series = stacked_series(rs, g)
            for a, age in enumerate(rs.ages):
                pos = t * n_ages + a
                lookback = stacked_window(series, pos, window)
                target = series[pos]
                if np.any(np.isnan(lookback)) or (require_target and np.isnan(target)):
                    dropped += 1
                    continue
                static.append((age, flags[g], year))
                seq.append(lookback)
                y.append(target)
                keys.append((flags[g], age, year))
                touched.append(year)
    return _sequence_set(static, seq, y, keys, "stacked", dropped, touched)


def write_samples(samples, path, delimiter=","):
    """Export a sample set as delimited text for audit."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if isinstance(samples, SampleSet):
            w.writerow(["key_gender", "key_age", "key_year", *samples.feature_names, "target"])
            for k, x, v in zip(samples.keys, samples.X, samples.y):
                w.writerow([*map(int, k), *map(repr, map(float, x)), repr(float(v))])
        else:
            steps = samples.seq.shape[1]
            w.writerow(["key_gender", "key_age", "key_year", *STATIC_FEATURES,
                        *[f"seq_{i}" for i in range(steps)], "target"])
            for k, s, q, v in zip(samples.keys, samples.static, samples.seq, samples.y):
                w.writerow([*map(int, k), *map(repr, map(float, s)),
                            *map(repr, map(float, q[:, 0])), repr(float(v))])


# -----------------------------------------------------------------------------
# min-max scaling


@dataclass(frozen=True)
class ScalerParams:
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float

    def to_dict(self):
        return {
            "feature_min": [float(v) for v in self.feature_min],
            "feature_max": [float(v) for v in self.feature_max],
            "target_min": float(self.target_min),
            "target_max": float(self.target_max),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature_min"]), np.array(d["feature_max"]),
                   d["target_min"], d["target_max"])


def _features_of(samples):
    return samples.X if isinstance(samples, SampleSet) else samples.static


def fit_scaler(samples):
    """Per-column min/max of the features and of the target.

    Fit on training rows only.
    """
    X = _features_of(samples)
    lo, hi = X.min(axis=0), X.max(axis=0)
    if np.any(lo == hi):
        warnings.warn(f"constant feature column(s) {np.flatnonzero(lo == hi).tolist()} scale to 0.5",
                      stacklevel=2)
    if samples.y.min() == samples.y.max():
        warnings.warn("constant target scales to 0.5", stacklevel=2)
    return ScalerParams(lo, hi, float(samples.y.min()), float(samples.y.max()))


def _minmax(v, lo, hi):
    v = np.asarray(v, dtype=float)
    span = np.asarray(hi - lo, dtype=float)
    safe = np.where(span == 0, 1.0, span)
    return np.where(span == 0, 0.5, (v - lo) / safe)


def scale_features(X, params):
    return _minmax(X, params.feature_min, params.feature_max)


def scale_target(v, params):
    return _minmax(v, params.target_min, params.target_max)


def unscale_target(v, params):
    v = np.asarray(v, dtype=float)
    return v * (params.target_max - params.target_min) + params.target_min


def scale(samples, params):
    """Apply min-max scaling; sequence entries use the target's range."""
    y = scale_target(samples.y, params)
    if isinstance(samples, SampleSet):
        return SampleSet(scale_features(samples.X, params), y, samples.keys,
                         samples.feature_names, samples.dropped)
    return SequenceSampleSet(
        scale_features(samples.static, params),
        scale_target(samples.seq, params),
        y,
        samples.keys,
        samples.variant,
        samples.dropped,
    )


# -----------------------------------------------------------------------------
# synthetic data


def _default_exposure(ages):
    decay = np.exp(-0.02 * (ages - ages[0]))
    return np.vstack([2.0e4 * decay, 1.2e4 * decay])


@dataclass(frozen=True)
class SynthConfig:
    """Gompertz log-rates with a linear calendar-year improvement.

    ``ln m = alpha + beta * age - delta * (year - base_year) + offset``
    where ``offset = gender_offset`` for males and 0 for females.

    ``exposure`` may be a scalar, an ``(genders, ages)`` profile reused every
    year, or a full ``(genders, ages, years)`` grid.
    """

    alpha: float = -9.35
    beta: float = 0.0815
    delta: float = 0.015
    gender_offset: float = 0.35
    exposure: object = None
    ages: tuple = (30, 95)
    years: tuple = (2012, 2021)
    base_year: int | None = None
    seed: int = 0
    age_grid: np.ndarray = field(init=False, repr=False)
    year_grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise DataError("beta must be positive")
        object.__setattr__(self, "age_grid", np.arange(self.ages[0], self.ages[1] + 1))
        object.__setattr__(self, "year_grid", np.arange(self.years[0], self.years[1] + 1))
        if len(self.age_grid) == 0 or len(self.year_grid) == 0:
            raise DataError("empty age or year range")
        if np.any(self.exposure_grid() <= 0):
            raise DataError("exposure profile must be strictly positive")

    def exposure_grid(self):
        shape = (len(GENDERS), len(self.age_grid), len(self.year_grid))
        if self.exposure is None:
            e = _default_exposure(self.age_grid)
        else:
            e = np.asarray(self.exposure, dtype=float)
        if e.ndim == 2:
            e = e[:, :, None]
        return np.broadcast_to(e, shape).astype(float)


def true_log_rates(cfg):
    base = cfg.years[0] if cfg.base_year is None else cfg.base_year
    offsets = np.array([cfg.gender_offset if g == "M" else 0.0 for g in GENDERS])
    return (cfg.alpha + cfg.beta * cfg.age_grid[None, :, None]
            - cfg.delta * (cfg.year_grid[None, None, :] - base)
            + offsets[:, None, None])


def simulate_deaths(log_rates, exposure, ages, years, seed):
    """Poisson deaths with mean ``exposure * exp(log_rates)``."""
    rng = np.random.default_rng(seed)
    exposure = np.asarray(exposure, dtype=float)
    deaths = rng.poisson(exposure * np.exp(log_rates)).astype(float)
    return MortalityDataset(ages, years, deaths, exposure)


def generate_synthetic(cfg):
    """Seeded synthetic dataset; identical seeds give identical datasets."""
    return simulate_deaths(true_log_rates(cfg), cfg.exposure_grid(), cfg.age_grid,
                           cfg.year_grid, cfg.seed)
