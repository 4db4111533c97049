"""Common predict-a-year contract over every model family.

A forecaster is fitted on a :class:`~mortlearn.data.MortalityDataset`
restricted to its training years. ``predict_year(rs, year)`` then returns
rates of shape ``(genders, ages)`` for ``year`` using only entries of ``rs``
that precede each target cell (NaN where no prediction is possible). The
surface passed in must contain a column for ``year``: observed rates there
are used solely by the stacked-series variants, for the younger ages of the
same year, exactly as in training.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import ensemble, neural
from .data import (
    GENDER_INDICATOR,
    build_cohort_sequences,
    build_lagged_sequences,
    build_stacked_sequences,
    build_static_samples,
    compute_rates,
    fit_scaler,
    scale,
    scale_features,
    scale_target,
    stacked_window,
    unscale_target,
)
from .exceptions import DataError, ModelError
from .leecarter import estimate_drift, fit_leecarter, lc_predict_rates

TREE_FAMILIES = ("rt", "rf", "bst", "xgb", "cat")
SEQUENCE_FAMILIES = ("lstm-1", "lstm-2", "lstm-3", "mha-1", "mha-2", "mha-3")
FAMILIES = TREE_FAMILIES + ("fnn",) + SEQUENCE_FAMILIES + ("lc", "oracle", "constant")

DEFAULTS = {
    "rt": {"max_depth": 6, "min_leaf": 5},
    "rf": {"n_trees": 50, "mtry": 2, "max_depth": 10, "min_leaf": 3, "bootstrap": True},
    "bst": {"rounds": 200, "learning_rate": 0.1, "max_depth": 3, "min_leaf": 1},
    "xgb": {"rounds": 200, "eta": 0.1, "reg_lambda": 1.0, "gamma": 0.0, "max_depth": 3,
            "min_leaf": 1},
    "cat": {"rounds": 200, "learning_rate": 0.1, "max_depth": 3, "min_leaf": 1,
            "prior_strength": 1.0},
    "fnn": {"epochs": 800, "batch_size": 64, "step_size": 2e-3, "width": 32, "layers": 4,
            "activation": "tanh"},
    "seq": {"epochs": 100, "batch_size": 32, "step_size": 1e-3, "width": 32, "layers": 4,
            "activation": "tanh", "lstm_hidden": 16, "d_model": 16, "n_heads": 2,
            "window": 132, "lags": 2},
    "lc": {},
    "oracle": {},
    "constant": {"value": 0.01},
}

_VARIANTS = {"1": "lagged", "2": "stacked", "3": "cohort"}


@dataclass(frozen=True)
class ModelSpec:
    """A model family, its hyperparameters and an optional explicit label."""

    family: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}; choose from {', '.join(FAMILIES)}")
        allowed = set(defaults_for(self.family))
        unknown = set(self.params) - allowed
        if unknown:
            raise DataError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")

    @property
    def name(self):
        return self.label or self.family

    def resolved(self):
        return {**defaults_for(self.family), **self.params}

    @classmethod
    def parse(cls, text):
        """Parse ``family[:key=value,...]``; ``label=`` sets the report name."""
        text = text.strip()
        family, _, rest = text.partition(":")
        family = family.strip().lower()
        params = {}
        label = None
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise DataError(f"bad hyperparameter {item!r} in model spec {text!r}")
            key = key.strip()
            if key == "label":
                label = value.strip()
                continue
            params[key] = _coerce(value.strip())
        return cls(family, params, label)

    def __str__(self):
        items = [f"{k}={v}" for k, v in sorted(self.params.items())]
        if self.label:
            items.append(f"label={self.label}")
        return self.family + (":" + ",".join(items) if items else "")


def _coerce(value):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def defaults_for(family):
    return DEFAULTS["seq"] if family in SEQUENCE_FAMILIES else DEFAULTS[family]


def derive_seed(global_seed, label, train_end):
    """Seed for one (model, fold) job, independent of execution order."""
    ss = np.random.SeedSequence([int(global_seed), zlib.crc32(label.encode()), int(train_end)])
    return int(ss.generate_state(1)[0])


# -----------------------------------------------------------------------------
# forecasters


class Forecaster:
    family = "base"

    def __init__(self, spec, seed=0):
        self.spec = spec
        self.params = spec.resolved()
        self.seed = int(seed)
        self.train_years = None

    def fit(self, ds):
        self.train_years = (int(ds.years[0]), int(ds.years[-1]))
        self._fit(ds)
        return self

    def _fit(self, ds):
        pass

    def predict_year(self, rs, year):
        raise NotImplementedError

    def to_dict(self):
        return {"family": self.spec.family, "spec": str(self.spec), "seed": self.seed,
                "params": self.params, "train_years": self.train_years}


class TabularForecaster(Forecaster):
    """Tree families and the FNN on ``[age, gender, year, m_{x,t-1}]``."""

    def _fit(self, ds):
        samples = build_static_samples(compute_rates(ds))
        self.scaler = fit_scaler(samples)
        sc = scale(samples, self.scaler)
        p = self.params
        fam = self.spec.family
        if fam == "rt":
            self.model = ensemble.fit_tree(sc.X, sc.y, p["max_depth"], p["min_leaf"])
        elif fam == "rf":
            self.model = ensemble.fit_forest(sc.X, sc.y, p["n_trees"], p["mtry"], p["bootstrap"],
                                             self.seed, p["max_depth"], p["min_leaf"])
        elif fam == "bst":
            self.model = ensemble.fit_gbm(sc.X, sc.y, p["rounds"], p["learning_rate"],
                                          p["max_depth"], p["min_leaf"])
        elif fam == "xgb":
            self.model = ensemble.fit_regboost(sc.X, sc.y, p["rounds"], p["eta"], p["reg_lambda"],
                                               p["gamma"], p["max_depth"], p["min_leaf"])
        elif fam == "cat":
            self.model = ensemble.fit_ordered_boost(
                sc.X, sc.y, p["rounds"], p["learning_rate"], p["max_depth"], p["min_leaf"],
                cat_feature=1, permutation_seed=self.seed, prior_strength=p["prior_strength"])
        elif fam == "fnn":
            cfg = neural.TrainConfig(p["epochs"], p["batch_size"], p["step_size"], self.seed)
            self.model = neural.fit_fnn(sc.X, sc.y, cfg, (p["width"],) * p["layers"], p["activation"])
        else:
            raise DataError(f"{fam} is not a tabular family")

    def predict_year(self, rs, year):
        out = np.full(rs.m.shape[:2], np.nan)
        try:
            samples = build_static_samples(rs, target_years=[year], require_target=False)
        except DataError:
            return out
        pred = unscale_target(self.model.predict(scale_features(samples.X, self.scaler)), self.scaler)
        _scatter(out, rs, samples.keys, pred)
        return out

    def to_dict(self):
        return {**super().to_dict(), "scaler": self.scaler.to_dict(), "model": self.model.to_dict()}


def _scatter(out, rs, keys, values):
    gidx = {GENDER_INDICATOR[gn]: i for i, gn in enumerate(rs.genders)}
    for (gi, age, _), v in zip(keys, values):
        out[gidx[int(gi)], int(age) - int(rs.ages[0])] = v


class SequenceForecaster(Forecaster):
    """LSTM or attention hybrids on lagged, stacked or cohort sequences."""

    def __init__(self, spec, seed=0):
        super().__init__(spec, seed)
        kind, _, num = spec.family.partition("-")
        self.branch = "lstm" if kind == "lstm" else "attention"
        self.variant = _VARIANTS[num]

    def _build(self, rs, **kw):
        if self.variant == "lagged":
            return build_lagged_sequences(rs, self.params["lags"], **kw)
        if self.variant == "cohort":
            return build_cohort_sequences(rs, **kw)
        return build_stacked_sequences(rs, self.params["window"], **kw)

    def _fit(self, ds):
        samples = self._build(compute_rates(ds))
        self.scaler = fit_scaler(samples)
        sc = scale(samples, self.scaler)
        p = self.params
        cfg = neural.TrainConfig(p["epochs"], p["batch_size"], p["step_size"], self.seed)
        self.model = neural.fit_hybrid(
            sc.static, sc.seq, sc.y, self.branch, cfg,
            hidden=(p["width"],) * p["layers"], hidden_activation=p["activation"],
            lstm_hidden=p["lstm_hidden"], d_model=p["d_model"], n_heads=p["n_heads"])

    def _predict_scaled(self, static, seq):
        return unscale_target(
            self.model.predict((scale_features(static, self.scaler), scale_target(seq, self.scaler))),
            self.scaler)

    def predict_year(self, rs, year):
        if self.variant == "stacked":
            return self._predict_stacked(rs, year)
        out = np.full(rs.m.shape[:2], np.nan)
        try:
            samples = self._build(rs, target_years=[year], require_target=False)
        except DataError:
            return out
        _scatter(out, rs, samples.keys, self._predict_scaled(samples.static, samples.seq))
        return out

    def _predict_stacked(self, rs, year):
        # younger ages of the target year enter the lookback: observed values
        # when present, otherwise this call's own earlier predictions
        t = rs.year_index(year)
        n_g, n_a = rs.m.shape[:2]
        work = np.array(rs.m[:, :, : t + 1])
        out = np.full((n_g, n_a), np.nan)
        flags = np.array([GENDER_INDICATOR[g] for g in rs.genders], dtype=float)
        window = self.params["window"]
        for a, age in enumerate(rs.ages):
            pos = t * n_a + a
            seqs = np.array([stacked_window(work[g].T.ravel(), pos, window) for g in range(n_g)])
            ok = ~np.any(np.isnan(seqs), axis=1)
            if np.any(ok):
                static = np.column_stack([np.full(n_g, age), flags, np.full(n_g, year)])[ok]
                out[ok, a] = self._predict_scaled(static, seqs[ok][:, :, None])
            for g in range(n_g):
                if np.isnan(work[g, a, t]):
                    work[g, a, t] = out[g, a]
        return out

    def to_dict(self):
        return {**super().to_dict(), "scaler": self.scaler.to_dict(), "model": self.model.to_dict()}


class LeeCarterForecaster(Forecaster):
    def _fit(self, ds):
        self.fits = {g: estimate_drift(fit_leecarter(ds, g)) for g in ds.genders}

    def predict_year(self, rs, year):
        out = np.full(rs.m.shape[:2], np.nan)
        for g, gender in enumerate(rs.genders):
            params = self.fits[gender]
            rates = lc_predict_rates(params, [year])[:, 0]
            for a, age in enumerate(params.ages):
                if rs.ages[0] <= age <= rs.ages[-1]:
                    out[g, int(age) - int(rs.ages[0])] = rates[a]
        return out

    def to_dict(self):
        return {**super().to_dict(), "model": {g: p.to_dict() for g, p in self.fits.items()}}


class OracleForecaster(Forecaster):
    """Returns the observed rates of the target year; a harness self-check."""

    def predict_year(self, rs, year):
        return np.array(rs.m[:, :, rs.year_index(year)])


class ConstantForecaster(Forecaster):
    def predict_year(self, rs, year):
        return np.full(rs.m.shape[:2], float(self.params["value"]))


def make_forecaster(spec, seed=0):
    if isinstance(spec, str):
        spec = ModelSpec.parse(spec)
    fam = spec.family
    if fam in TREE_FAMILIES or fam == "fnn":
        return TabularForecaster(spec, seed)
    if fam in SEQUENCE_FAMILIES:
        return SequenceForecaster(spec, seed)
    if fam == "lc":
        return LeeCarterForecaster(spec, seed)
    if fam == "oracle":
        return OracleForecaster(spec, seed)
    return ConstantForecaster(spec, seed)


def predict_recursive(forecaster, rs, horizon):
    """Extend ``rs`` by ``horizon`` years of one-step-ahead predictions.

    Each predicted year is appended before the next is predicted, so it
    supplies the lagged and sequence inputs of the following year.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    for _ in range(horizon):
        year = int(rs.years[-1]) + 1
        blank = rs.append_year(np.full(rs.m.shape[:2], np.nan))
        pred = forecaster.predict_year(blank, year)
        if np.all(np.isnan(pred)):
            raise ModelError(f"{forecaster.spec.name} cannot predict {year}: not enough history")
        # additive boosters can undershoot zero near the lowest rates
        rs = rs.append_year(np.where(np.isnan(pred), np.nan, np.maximum(pred, 0.0)))
    return rs
