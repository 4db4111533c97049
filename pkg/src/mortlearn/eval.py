"""Rolling-origin cross-validation, error metrics and residual exports."""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import GENDERS, access_log, compute_rates
from .exceptions import DataError
from .forecast import ModelSpec, derive_seed, make_forecaster

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CVFold:
    train_start: int
    train_end: int
    test_year: int

    @property
    def train_years(self):
        return range(self.train_start, self.train_end + 1)


def make_folds(years, first_train_end, last_test, train_start=None):
    """Expanding folds ``(.. first_train_end -> +1), (.. +1 -> +2), ...``.

    ``years`` is the inclusive ``(first, last)`` span of available data;
    training always starts at ``train_start`` (default: first data year).
    """
    first, last = int(years[0]), int(years[-1])
    start = first if train_start is None else int(train_start)
    if not first <= start <= first_train_end:
        raise DataError(f"training start {start} must lie in {first}..{first_train_end}")
    if not first_train_end < last_test:
        raise DataError("first_train_end must precede last_test")
    if last_test > last:
        raise DataError(f"last test year {last_test} is beyond the data ({first}..{last})")
    folds = [CVFold(start, end, end + 1) for end in range(first_train_end, last_test)]
    if not folds:
        raise DataError("no folds")
    return folds


def _paired(pred, obs):
    pred = np.asarray(pred, dtype=float).ravel()
    obs = np.asarray(obs, dtype=float).ravel()
    if pred.shape != obs.shape:
        raise DataError("predictions and observations differ in length")
    if pred.size == 0:
        raise DataError("cannot score an empty set of cells")
    return pred - obs


def mae(pred, obs):
    return float(np.mean(np.abs(_paired(pred, obs))))


def rmse(pred, obs):
    r = _paired(pred, obs)
    return float(np.sqrt(np.mean(r * r)))


@dataclass
class FoldResult:
    model: str
    spec: str
    fold: CVFold
    seed: int
    mae: float = float("nan")
    rmse: float = float("nan")
    keys: list = field(default_factory=list)
    pred: np.ndarray = None
    obs: np.ndarray = None
    skipped_missing: int = 0
    skipped_unpredictable: int = 0
    max_train_year: int | None = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None

    @property
    def n(self):
        return len(self.keys)


@dataclass
class CVReport:
    folds: list
    specs: list
    results: list

    def for_model(self, name):
        out = [r for r in self.results if r.model == name]
        if not out:
            raise DataError(f"model {name!r} not in report")
        return out

    def mean_metrics(self, name):
        good = [r for r in self.for_model(name) if r.ok]
        if not good:
            return float("nan"), float("nan")
        return (float(np.mean([r.mae for r in good])), float(np.mean([r.rmse for r in good])))

    @property
    def models(self):
        return [s.name for s in self.specs]

    def summary_rows(self):
        rows = []
        for name in self.models:
            for r in self.for_model(name):
                rows.append((name, f"{r.fold.train_start}-{r.fold.train_end}", r.fold.test_year,
                             r.mae, r.rmse, r.n, "ok" if r.ok else "failed"))
            m_mae, m_rmse = self.mean_metrics(name)
            rows.append((name, "mean", "", m_mae, m_rmse, "", ""))
        return rows

    def to_dict(self):
        return {
            "folds": [[f.train_start, f.train_end, f.test_year] for f in self.folds],
            "models": {
                s.name: {
                    "spec": str(s),
                    "mean_mae": self.mean_metrics(s.name)[0],
                    "mean_rmse": self.mean_metrics(s.name)[1],
                    "folds": [
                        {
                            "test_year": r.fold.test_year,
                            "seed": r.seed,
                            "mae": r.mae,
                            "rmse": r.rmse,
                            "n": r.n,
                            "skipped_missing": r.skipped_missing,
                            "skipped_unpredictable": r.skipped_unpredictable,
                            "max_train_year": r.max_train_year,
                            "error": r.error,
                        }
                        for r in self.for_model(s.name)
                    ],
                }
                for s in self.specs
            },
        }


def summary_table(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "train", "test_year", "mae", "rmse", "n", "status"])
    for row in report.summary_rows():
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def summary_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def run_fold(ds, spec, fold, seed):
    """Fit one model on one fold and score it on the fold's test year."""
    res = FoldResult(spec.name, str(spec), fold, seed)
    try:
        forecaster = make_forecaster(spec, seed)
        train = ds.restrict_years(fold.train_start, fold.train_end)
        with access_log() as log:
            forecaster.fit(train)
        res.max_train_year = max((entry[2] for entry in log), default=fold.train_end)
        rs = compute_rates(ds.restrict_years(fold.train_start, fold.test_year))
        pred = forecaster.predict_year(rs, fold.test_year)
        obs = rs.m[:, :, -1]
        have_obs = ~np.isnan(obs)
        have_pred = ~np.isnan(pred)
        use = have_obs & have_pred
        res.skipped_missing = int((~have_obs).sum())
        res.skipped_unpredictable = int((have_obs & ~have_pred).sum())
        if not use.any():
            raise DataError(f"no evaluable cells in {fold.test_year}")
        g_idx, a_idx = np.nonzero(use)
        res.keys = [(rs.genders[g], int(rs.ages[a]), fold.test_year) for g, a in zip(g_idx, a_idx)]
        res.pred = pred[use]
        res.obs = obs[use]
        res.mae = mae(res.pred, res.obs)
        res.rmse = rmse(res.pred, res.obs)
    except Exception as exc:  # one failing (model, fold) must not sink the report
        res.error = f"{type(exc).__name__}: {exc}"
        logger.warning("%s failed on fold %s: %s", spec.name, fold.test_year, res.error)
        logger.debug("%s", traceback.format_exc())
    return res


def _run_job(args):
    return run_fold(*args)


def ts_cross_validate(ds, specs, folds, seed=0, n_jobs=1):
    """Refit every model from scratch on every fold and score one year ahead.

    Each (model, fold) job gets a seed derived from ``seed``, the model name
    and the fold's last training year, so parallel and serial runs agree.
    """
    specs = [ModelSpec.parse(s) if isinstance(s, str) else s for s in specs]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate model names {names}; add label=... to model specs")
    jobs = [(ds, spec, fold, derive_seed(seed, spec.name, fold.train_end))
            for spec in specs for fold in folds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return CVReport(list(folds), specs, results)


def residual_grid_export(report, model):
    """``gender,age,year,abs_residual`` rows for every scored cell of ``model``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gender", "age", "year", "abs_residual"])
    for r in report.for_model(model):
        if not r.ok:
            continue
        for (gender, age, year), p, o in zip(r.keys, r.pred, r.obs):
            w.writerow([gender, age, year, repr(float(abs(p - o)))])
    return buf.getvalue()


def parse_residual_grid(text):
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["gender"] not in GENDERS:
            raise DataError(f"bad gender {row['gender']!r}")
        rows.append((row["gender"], int(row["age"]), int(row["year"]), float(row["abs_residual"])))
    return rows
