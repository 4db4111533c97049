"""Command-line entry point: ``mortlearn <command> [options]``.

Every command reads its parameters from built-in defaults, then an optional
``key = value`` config file, then command-line flags (flags win). The fully
resolved configuration is written to ``manifest.txt`` in the output
directory; ``mortlearn --config <dir>/manifest.txt --out-dir <other>``
repeats the run and reproduces the same files byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    GENDERS,
    RateSurface,
    SynthConfig,
    compute_rates,
    generate_synthetic,
    load_dataset,
    load_rates,
    true_log_rates,
    write_dataset,
    write_rates,
)
from .eval import make_folds, residual_grid_export, summary_json, summary_table, ts_cross_validate
from .exceptions import DataError, ModelError
from .forecast import ModelSpec, derive_seed, make_forecaster, predict_recursive
from .lifetable import (
    OMEGA,
    AnnuityConfig,
    aggregate_provision,
    compare_projection,
    hold_last_year,
    load_static_table,
    period_life_expectancy,
    project_exposure,
    static_provision,
)

logger = logging.getLogger("mortlearn")

MANIFEST = "manifest.txt"
GLOBAL_KEYS = ("command", "seed", "jobs")
HELP = {
    "synth": "generate a synthetic Gompertz dataset",
    "rates": "compute central death rates from a dataset",
    "cv": "rolling-origin cross-validation of one or more models",
    "forecast": "fit a model and forecast future rates",
    "apps": "life expectancy, provisions and cash flows from a forecast",
}

# (key, type, default); a default of None marks a required parameter,
# an empty string an optional one
PARAMS = {
    "synth": [
        ("alpha", float, -9.35),
        ("beta", float, 0.0815),
        ("delta", float, 0.015),
        ("gender_offset", float, 0.35),
        ("exposure", float, ""),
        ("age_min", int, 30),
        ("age_max", int, 95),
        ("year_min", int, 2012),
        ("year_max", int, 2021),
    ],
    "rates": [
        ("data", Path, None),
    ],
    "cv": [
        ("data", Path, None),
        ("models", str, None),
        ("first_train_end", int, None),
        ("last_test", int, ""),
        ("train_start", int, ""),
    ],
    "forecast": [
        ("data", Path, None),
        ("model", str, None),
        ("horizon", int, 10),
        ("train_end", int, ""),
    ],
    "apps": [
        ("data", Path, None),
        ("forecast", Path, None),
        ("interest", float, 0.05),
        ("valuation_year", int, ""),
        ("horizon", int, 10),
        ("e_age", int, 60),
        ("min_age", int, 60),
        ("omega", int, OMEGA),
        ("band_width", int, 5),
        ("static_table", Path, ""),
        ("observed", Path, ""),
    ],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -----------------------------------------------------------------------------
# configuration


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _convert(key, kind, raw):
    if raw == "" or raw is None:
        return raw
    if kind is Path:
        return Path(raw).resolve()
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def resolve(command, config, flags):
    """Merge defaults, config file values and flag values for ``command``."""
    known = {k for k, _, _ in PARAMS[command]} | set(GLOBAL_KEYS)
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {"seed": 0, "jobs": 1}
    for key, kind, default in PARAMS[command]:
        cfg[key] = default
    for key in ("seed", "jobs"):
        if key in config:
            cfg[key] = _convert(key, int, config[key])
    for key, kind, _ in PARAMS[command]:
        if key in config:
            cfg[key] = _convert(key, kind, config[key])
    for key, value in flags.items():
        if value is not None:
            kind = int if key in ("seed", "jobs") else dict((k, t) for k, t, _ in PARAMS[command])[key]
            cfg[key] = _convert(key, kind, str(value))
    missing = [k for k, _, d in PARAMS[command] if d is None and cfg[k] is None]
    if missing:
        raise UsageError(f"{command} needs: {', '.join(missing)}")
    if cfg["jobs"] < 1:
        raise UsageError("jobs must be >= 1")
    return cfg


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_manifest(out_dir, command, cfg, notes=()):
    lines = ["# mortlearn run manifest; rerun with: mortlearn --config manifest.txt",
             f"# version {__version__}",
             f"command = {command}",
             f"seed = {cfg['seed']}",
             f"jobs = {cfg['jobs']}"]
    lines += [f"{key} = {_fmt(cfg[key])}" for key, _, _ in PARAMS[command]]
    lines += [f"# {n}" for n in notes]
    (out_dir / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_csv(path, header, rows):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if v is not None else "" for v in row])


# -----------------------------------------------------------------------------
# commands


def cmd_synth(cfg, out_dir):
    sc = SynthConfig(
        alpha=cfg["alpha"], beta=cfg["beta"], delta=cfg["delta"],
        gender_offset=cfg["gender_offset"],
        exposure=None if cfg["exposure"] == "" else cfg["exposure"],
        ages=(cfg["age_min"], cfg["age_max"]), years=(cfg["year_min"], cfg["year_max"]),
        seed=cfg["seed"],
    )
    ds = generate_synthetic(sc)
    write_dataset(ds, out_dir / "dataset.csv")
    m = np.exp(true_log_rates(sc))
    truth = RateSurface(ds.ages, ds.years, m, np.zeros(m.shape, dtype=bool), ds.genders)
    write_rates(truth, out_dir / "true_rates.csv")
    return []


def cmd_rates(cfg, out_dir):
    write_rates(compute_rates(load_dataset(cfg["data"])), out_dir / "rates.csv")
    return []


def _parse_models(text):
    try:
        specs = [ModelSpec.parse(s) for s in text.split(";") if s.strip()]
    except DataError as exc:
        raise UsageError(str(exc)) from None
    if not specs:
        raise UsageError("models: give at least one model spec")
    return specs


def cmd_cv(cfg, out_dir):
    ds = load_dataset(cfg["data"])
    specs = _parse_models(cfg["models"])
    last = cfg["last_test"] if cfg["last_test"] != "" else int(ds.years[-1])
    start = None if cfg["train_start"] == "" else cfg["train_start"]
    folds = make_folds((ds.years[0], ds.years[-1]), cfg["first_train_end"], last, start)
    report = ts_cross_validate(ds, specs, folds, seed=cfg["seed"], n_jobs=cfg["jobs"])
    (out_dir / "summary.csv").write_text(summary_table(report), encoding="utf-8")
    (out_dir / "summary.json").write_text(summary_json(report), encoding="utf-8")
    for spec in specs:
        (out_dir / f"residuals_{spec.name}.csv").write_text(
            residual_grid_export(report, spec.name), encoding="utf-8")
    failed = [r for r in report.results if not r.ok]
    for r in failed:
        logger.warning("%s fold %s failed: %s", r.model, r.fold.test_year, r.error)
    notes = [f"seed {r.model} train_end={r.fold.train_end} -> {r.seed}" for r in report.results]
    if failed and len(failed) == len(report.results):
        raise ModelError("every (model, fold) job failed; see summary.csv")
    return notes


def cmd_forecast(cfg, out_dir):
    ds = load_dataset(cfg["data"])
    spec = _parse_models(cfg["model"])[0]
    train_end = cfg["train_end"] if cfg["train_end"] != "" else int(ds.years[-1])
    train = ds.restrict_years(ds.years[0], train_end)
    seed = derive_seed(cfg["seed"], spec.name, train_end)
    forecaster = make_forecaster(spec, seed)
    forecaster.fit(train)
    extended = predict_recursive(forecaster, compute_rates(train), cfg["horizon"])
    future = extended.restrict_years(train_end + 1, extended.years[-1])
    write_rates(future, out_dir / "forecast.csv")

    # observed dots against the predicted curve, for years with data
    obs = compute_rates(ds)
    rows = []
    for t, year in enumerate(future.years):
        for g, gender in enumerate(future.genders):
            for a, age in enumerate(future.ages):
                o = ""
                if obs.years[0] <= year <= obs.years[-1] and not obs.missing[g, a, obs.year_index(year)]:
                    o = float(obs.m[g, a, obs.year_index(year)])
                rows.append((gender, int(age), int(year), o, float(future.m[g, a, t])))
    _write_csv(out_dir / "curves.csv", ["gender", "age", "year", "observed", "predicted"], rows)
    return [f"seed {spec.name} train_end={train_end} -> {seed}"]


def merged_surface(observed, forecast):
    """Observed history with the forecast years laid over and after it."""
    if not np.array_equal(observed.ages, forecast.ages):
        raise DataError("forecast ages differ from the data ages")
    first = int(min(observed.years[0], forecast.years[0]))
    last = int(max(observed.years[-1], forecast.years[-1]))
    m = np.full((len(GENDERS), len(observed.ages), last - first + 1), np.nan)
    for src in (observed, forecast):
        i = int(src.years[0]) - first
        m[:, :, i : i + len(src.years)] = np.where(src.missing, m[:, :, i : i + len(src.years)], src.m)
    return RateSurface(observed.ages, np.arange(first, last + 1), m, np.isnan(m))


def cmd_apps(cfg, out_dir):
    ds = load_dataset(cfg["data"])
    fc = load_rates(cfg["forecast"])
    ann = AnnuityConfig(cfg["interest"])
    omega = cfg["omega"]
    t0 = cfg["valuation_year"] if cfg["valuation_year"] != "" else int(ds.years[-1])
    surface = merged_surface(compute_rates(ds), fc)
    notes = []

    # period life expectancy for each forecast year
    rows = period_life_expectancy(surface, fc.years, x=cfg["e_age"], omega=omega)
    _write_csv(out_dir / "life_expectancy.csv",
               ["year"] + [f"e{cfg['e_age']}_{g}" for g in surface.genders], rows)

    # provision on the valuation-year exposure of ages >= min_age
    ages = np.array([a for a in ds.ages if a >= cfg["min_age"]])
    if not len(ages):
        raise DataError(f"no data ages at or above min_age {cfg['min_age']}")
    idx = [ds.age_index(a) for a in ages]
    base = np.array(ds.exposure[:, idx, ds.year_index(t0)])
    tail_end = t0 + omega - int(ages[0])
    if tail_end > int(surface.years[-1]):
        notes.append(f"rates after {int(surface.years[-1])} held at that year's level up to {tail_end}")
    dynamic = aggregate_provision(base, hold_last_year(surface, tail_end), t0, ann, ages, omega)
    prov = [("dynamic", g, dynamic[g]) for g in (*surface.genders, "total")]
    if cfg["static_table"] != "":
        table = load_static_table(cfg["static_table"], omega)
        stat = {g: static_provision(base[i], ages, table, ann) for i, g in enumerate(surface.genders)}
        stat["total"] = sum(stat.values())
        prov += [("static", g, stat[g]) for g in (*surface.genders, "total")]
        prov.append(("relative_difference", "total",
                     (dynamic["total"] - stat["total"]) / stat["total"] if stat["total"] else None))
    _write_csv(out_dir / "provision.csv", ["basis", "gender", "value"], prov)

    # closed-group cash flow
    proj = project_exposure(base, hold_last_year(surface, t0 + cfg["horizon"]), t0, cfg["horizon"],
                            ages=ages, omega=omega)
    _write_csv(out_dir / "cashflow.csv", ["year", "total_exposure"],
               zip(proj.years.tolist(), proj.totals().tolist()))
    grid = [(gender, int(age), int(year), float(proj.exposure[g, a, k]))
            for g, gender in enumerate(proj.genders)
            for a, age in enumerate(proj.ages)
            for k, year in enumerate(proj.years)]
    _write_csv(out_dir / "cashflow_grid.csv", ["gender", "age", "year", "exposure"], grid)

    if cfg["observed"] != "":
        rows = compare_projection(load_dataset(cfg["observed"]), proj, cfg["band_width"], cfg["min_age"])
        _write_csv(out_dir / "projection_comparison.csv",
                   ["gender", "year", "band", "projected", "observed", "relative_difference"], rows)
    return notes


COMMANDS = {
    "synth": cmd_synth,
    "rates": cmd_rates,
    "cv": cmd_cv,
    "forecast": cmd_forecast,
    "apps": cmd_apps,
}


# -----------------------------------------------------------------------------
# entry point


def build_parser():
    parser = _Parser(prog="mortlearn", description="Mortality forecasting with machine learning.")
    parser.add_argument("--config", type=Path, help="key = value file (a manifest works too)")
    parser.add_argument("--seed", type=int, help="global seed (default 0)")
    parser.add_argument("--out-dir", type=Path, default=Path("mortlearn-out"))
    parser.add_argument("--jobs", type=int, help="parallel (model, fold) jobs (default 1)")
    parser.add_argument("--verbose", "-v", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    for name, params in PARAMS.items():
        p = sub.add_parser(name, help=HELP[name])
        for key, kind, default in params:
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help="required" if default is None else f"default: {default or 'none'}")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = read_config(args.config) if args.config else {}
        command = args.command or config.get("command")
        if command not in COMMANDS:
            raise UsageError("give a command (synth, rates, cv, forecast, apps) or a config naming one")
        if args.command and config.get("command", command) != command:
            raise UsageError(f"config is for {config['command']!r}, not {command!r}")
        config.pop("command", None)
        flags = {k: getattr(args, k, None) for k, _, _ in PARAMS[command]}
        flags.update(seed=args.seed, jobs=args.jobs)
        cfg = resolve(command, config, flags)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    out_dir = args.out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        notes = COMMANDS[command](cfg, out_dir)
        write_manifest(out_dir, command, cfg, notes)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
