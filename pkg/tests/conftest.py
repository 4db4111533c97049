import warnings

import numpy as np
import pytest

from mortlearn.data import MortalityDataset, SynthConfig, compute_rates, generate_synthetic


@pytest.fixture
def small_cfg():
    return SynthConfig(ages=(30, 45), years=(2012, 2019), exposure=5e4, seed=7)


@pytest.fixture
def small_ds(small_cfg):
    return generate_synthetic(small_cfg)


@pytest.fixture
def full_ds():
    return generate_synthetic(SynthConfig(seed=11))


@pytest.fixture
def full_rs(full_ds):
    return compute_rates(full_ds)


def grid_dataset(ages, years, m, exposure=1000.0):
    """Deterministic dataset whose rates equal ``m`` exactly (D = m * E)."""
    ages = np.arange(ages[0], ages[1] + 1)
    years = np.arange(years[0], years[1] + 1)
    shape = (2, len(ages), len(years))
    m = np.broadcast_to(np.asarray(m, dtype=float), shape)
    E = np.full(shape, float(exposure))
    return MortalityDataset(ages, years, m * E, E)


@pytest.fixture(autouse=True)
def _quiet_constant_feature_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="constant")
        yield


# acceptance criteria: one summary line per criterion, failing if any of its
# tests fail or its total runtime exceeds the budget
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget): acceptance criterion and its "
                                       "runtime budget in seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title, budget = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "budget": budget, "ok": True, "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.when == "call" or not report.passed:
        entry["ok"] = entry["ok"] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        c = _CRITERIA[number]
        within = c["seconds"] < c["budget"]
        status = "PASS" if c["ok"] and within else "FAIL"
        note = "" if within else f", over the {c['budget']} s budget"
        terminalreporter.write_line(f"{status} criterion {number:2d}: {c['title']} "
                                    f"({c['seconds']:.1f} s{note})")
