"""Acceptance criteria, one test class per criterion.

Each class carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion, failing it on any test failure or when its
total runtime exceeds the budget. Run alone with
``pytest tests/test_acceptance.py``.
"""

import time
from collections import defaultdict

import numpy as np
import pytest

from mortlearn.cli import main
from mortlearn.data import (
    MortalityDataset,
    RateSurface,
    SynthConfig,
    build_static_samples,
    compute_rates,
    generate_synthetic,
    true_log_rates,
)
from mortlearn.ensemble import fit_gbm, fit_regboost, fit_tree, ordered_target_statistic
from mortlearn.eval import make_folds, mae, rmse, ts_cross_validate
from mortlearn.leecarter import fit_leecarter
from mortlearn.lifetable import (
    AnnuityConfig,
    LifeTableSlice,
    aggregate_provision,
    annuity_value,
    life_expectancy,
    project_exposure,
    rates_to_q,
    static_provision,
)
from mortlearn.neural import (
    AttentionBranch,
    FNNModel,
    HybridModel,
    LSTMBranch,
    gradient,
    lstm_forward,
    mha_forward,
    sigmoid,
    softmax,
)

from oracles import (
    block_gradient_errors,
    brute_force_cart,
    finite_difference,
    geometric_annuity,
    geometric_life_expectancy,
    partition_sse,
    rel_error,
    tree_leaves,
)

# Desk-scale settings shared by the CV sweeps. Trees follow "rt" (random
# forest: ten bagged copies of it) and the boosters use 50 rounds of depth 2;
# stacked sequences use a shorter window and fewer epochs. Everything else
# keeps its defaults.
DESK_SPECS = {
    "rt": "rt",
    "rf": "rf:n_trees=10,max_depth=6,min_leaf=5",
    "bst": "bst:rounds=50,max_depth=2",
    "xgb": "xgb:rounds=50,max_depth=2",
    "cat": "cat:rounds=50,max_depth=2",
    "fnn": "fnn",
    "lstm-1": "lstm-1",
    "lstm-2": "lstm-2:window=24,epochs=30",
    "lstm-3": "lstm-3",
    "mha-1": "mha-1",
    "mha-2": "mha-2:window=24,epochs=30",
    "mha-3": "mha-3",
    "lc": "lc",
}
TREE_FAMILIES = ("rt", "rf", "bst", "xgb", "cat")

pytestmark = pytest.mark.filterwarnings("ignore:constant feature")


def cart_instance(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(2, 31))
    p = int(rng.integers(1, 5))
    depth = int(rng.integers(0, 3))
    if seed % 2:
        X = rng.integers(0, 5, (n, p)).astype(float)
        y = rng.integers(0, 6, n).astype(float)
    else:
        X = rng.normal(size=(n, p))
        y = rng.normal(size=n)
    return X, y, depth


def noise_floor(cfg, ds, folds):
    """Fold mean of ``mean |m_true - m_observed|`` over each test year."""
    truth = np.exp(true_log_rates(cfg))
    rs = compute_rates(ds)
    floors = []
    for f in folds:
        j = int(np.searchsorted(rs.years, f.test_year))
        observed = np.where(rs.missing[:, :, j], np.nan, rs.m[:, :, j])
        floors.append(np.nanmean(np.abs(truth[:, :, j] - observed)))
    return float(np.mean(floors))


def distinct_per_gender_year(result):
    groups = defaultdict(list)
    for (g, _, year), p in zip(result.keys, result.pred):
        groups[(g, year)].append(p)
    return {k: (len(np.unique(v)), len(v)) for k, v in groups.items()}


@pytest.mark.criterion(1, "CART matches brute-force enumeration", 10)
class TestCriterion1CartOracle:
    @pytest.mark.parametrize("seed", range(50))
    def test_instance(self, seed):
        X, y, depth = cart_instance(seed)
        assert X.shape[0] <= 30 and X.shape[1] <= 4 and depth <= 2
        tree = fit_tree(X, y, max_depth=depth)
        expected = brute_force_cart(X, y, depth)
        assert tree_leaves(tree, X) == expected
        assert partition_sse(tree_leaves(tree, X), y) == partition_sse(expected, y)


@pytest.mark.criterion(2, "boosting SSE monotone and single-leaf closed form", 10)
class TestCriterion2BoostingMonotone:
    def test_sse_non_increasing(self, small_ds):
        s = build_static_samples(compute_rates(small_ds))
        model = fit_gbm(s.X, s.y, rounds=50, learning_rate=0.1, max_depth=2)
        assert len(model.train_sse) == 51
        assert np.all(np.diff(model.train_sse) <= 0)

    def test_single_leaf_decrease(self):
        rng = np.random.default_rng(2)
        n, lam = 50, 0.1
        X = rng.normal(size=(n, 3))
        y = rng.normal(loc=0.5, size=n)
        model = fit_gbm(X, y, rounds=50, learning_rate=lam, max_depth=0)
        F = np.zeros(n)
        for k in range(50):
            rbar = np.mean(y - F)
            assert abs((model.train_sse[k + 1] - model.train_sse[k]) + n * rbar**2 * lam * (2 - lam)) <= 1e-10
            F = F + lam * rbar


@pytest.mark.criterion(3, "second-order booster reduces to gradient boosting", 5)
class TestCriterion3SecondOrderReduction:
    @pytest.mark.parametrize("seed", range(5))
    def test_identical_predictions(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        a = fit_regboost(X, y, rounds=30, eta=0.2, reg_lambda=0.0, gamma=0.0, max_depth=2)
        b = fit_gbm(X, y, rounds=30, learning_rate=0.2, max_depth=2)
        assert np.max(np.abs(a.predict(X) - b.predict(X))) <= 1e-12


@pytest.mark.criterion(4, "ordered target statistic prefix property", 5)
class TestCriterion4OrderedStatistic:
    def test_trials(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            cats = rng.integers(0, 4, n)
            y = rng.normal(size=n)
            perm = rng.permutation(n)
            enc = ordered_target_statistic(cats, y, perm, 1.0, float(np.mean(y)))
            row = int(rng.integers(0, n))
            pos = int(np.flatnonzero(perm == row)[0])
            y2 = y.copy()
            y2[perm[pos + 1:]] = rng.normal(size=n - pos - 1) * 50
            enc2 = ordered_target_statistic(cats, y2, perm, 1.0, float(np.mean(y)))
            assert enc2[row] == enc[row]


@pytest.mark.criterion(5, "finite-difference gradient checks", 30)
class TestCriterion5Gradients:
    TOL = 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_fnn(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(7, 4))
        y = rng.uniform(size=7)
        model = FNNModel(4, hidden=(6, 6, 6, 6), seed=seed, loss="mse")
        assert model.stack.activations[-1] == "sigmoid" and len(model.hidden) == 4
        _, grads = gradient(model, X, y)
        for name, p in model.params.items():
            def f(v, p=p):
                saved = p.copy()
                p[...] = v.reshape(p.shape)
                val = float(np.mean((model.predict(X) - y) ** 2))
                p[...] = saved
                return val
            fd = finite_difference(f, p.ravel()).reshape(p.shape)
            assert rel_error(grads[name], fd) < self.TOL, name

    @pytest.mark.parametrize("seed", range(5))
    def test_lstm(self, seed):
        rng = np.random.default_rng(seed)
        errors = block_gradient_errors(LSTMBranch(2, 4, rng), rng.normal(size=(3, 6, 2)), seed)
        assert max(errors.values()) < self.TOL, errors

    @pytest.mark.parametrize("seed", range(5))
    def test_attention(self, seed):
        rng = np.random.default_rng(seed)
        block = AttentionBranch(1, 5, d_model=4, n_heads=2, rng=rng)
        errors = block_gradient_errors(block, rng.normal(size=(3, 5, 1)), seed)
        assert max(errors.values()) < self.TOL, errors


@pytest.mark.criterion(6, "architecture invariants", 10)
class TestCriterion6Invariants:
    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        block = AttentionBranch(1, 10, d_model=8, n_heads=2, rng=rng)
        _, A = mha_forward(block, rng.normal(size=(4, 10, 1)) * 5)
        assert np.max(np.abs(A.sum(axis=-1) - 1)) <= 1e-12

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = rng.normal(size=(4, 9)) * 5
            assert np.max(np.abs(softmax(s + rng.uniform(-100, 100)) - softmax(s))) <= 1e-12

    def test_lstm_cell_conservation(self):
        rng = np.random.default_rng(2)
        H = 3
        block = LSTMBranch(1, H, rng)
        block.params["W"][...] = 0.0
        block.params["b"][:H] = -60.0
        block.params["b"][H : 2 * H] = 60.0
        c0 = rng.normal(size=H)
        _, hs, cs = lstm_forward(block, rng.normal(size=(2, 15, 1)), c0=c0)
        assert np.max(np.abs(cs - c0)) <= 1e-12
        assert np.max(np.abs(hs - sigmoid(np.zeros(H)) * np.tanh(c0))) <= 1e-12

    @pytest.mark.parametrize("branch", ["lstm", "attention"])
    def test_hybrid_reduction(self, branch):
        rng = np.random.default_rng(3)
        model = HybridModel(4, 6, branch, seed=1)
        n_seq = model.seq_branch.output_size
        model.params["head.W0"][:n_seq] = 0.0
        static = rng.uniform(size=(9, 4))
        got = model.predict((static, rng.normal(size=(9, 6, 1))))
        direct = sigmoid(model.static_branch.forward(static)[0] @ model.params["head.W0"][n_seq:, 0]
                         + model.params["head.b0"][0])
        assert np.max(np.abs(got - direct)) <= 1e-12


@pytest.mark.criterion(7, "Lee-Carter Poisson recovery", 60)
class TestCriterion7LeeCarter:
    def test_recovery(self):
        ages = np.arange(30, 96)
        years = np.arange(2012, 2022)
        assert len(ages) == 66 and len(years) == 10
        x = ages - ages.mean()
        a = -9.35 + 0.0815 * ages
        b = np.exp(-0.5 * (x / 20) ** 2)
        b = b / b.sum()
        k = np.linspace(20.0, -25.0, len(years)) + 0.8 * np.sin(np.arange(len(years)))
        k = k - k.mean()
        m = np.exp(a[:, None] + b[:, None] * k[None, :])
        E = np.full((2, 66, 10), 1e6)
        D = np.random.default_rng(7).poisson(E * m[None]).astype(float)
        ds = MortalityDataset(ages, years, D, E)
        for gender in ("M", "F"):
            p = fit_leecarter(ds, gender)
            assert np.max(np.abs(p.a - a)) < 0.02
            assert np.max(np.abs(p.b - b)) < 0.02
            assert np.corrcoef(p.kappa, k)[0, 1] > 0.99
            assert abs(p.b.sum() - 1) < 1e-10 and abs(p.kappa.sum()) < 1e-10
            assert np.all(np.diff(p.loglik_trace) >= 0)


@pytest.fixture(scope="module")
def sweep():
    cfg = SynthConfig(exposure=1e5, years=(2013, 2019), seed=1)
    ds = generate_synthetic(cfg)
    folds = make_folds((2013, 2019), 2015, 2019)
    start = time.perf_counter()
    report = ts_cross_validate(ds, ["oracle", *DESK_SPECS.values()], folds, seed=0)
    return folds, report, time.perf_counter() - start


@pytest.mark.criterion(8, "CV harness: folds, oracle, no leakage", 600)
class TestCriterion8Harness:
    def test_four_expanding_folds(self, sweep):
        folds, _, _ = sweep
        assert [(f.train_start, f.train_end, f.test_year) for f in folds] == [
            (2013, 2015, 2016), (2013, 2016, 2017), (2013, 2017, 2018), (2013, 2018, 2019)]

    def test_oracle_zero(self, sweep):
        _, report, _ = sweep
        assert report.mean_metrics("oracle") == (0.0, 0.0)
        assert all(r.mae == 0.0 and r.rmse == 0.0 for r in report.for_model("oracle"))

    def test_no_leakage(self, sweep):
        folds, report, _ = sweep
        assert set(report.models) == {"oracle", *DESK_SPECS}
        for r in report.results:
            assert r.ok, (r.model, r.error)
            assert r.max_train_year <= r.fold.train_end < r.fold.test_year, r.model

    def test_runtime(self, sweep):
        assert sweep[2] < 600


@pytest.mark.criterion(9, "metric identities", 1)
class TestCriterion9Metrics:
    def test_hand_examples(self):
        assert abs(mae([0.0, 0.02], [0.0, 0.0]) - 0.01) < 1e-15
        assert abs(rmse([0.0, 0.02], [0.0, 0.0]) - 0.014142) <= 1e-6

    def test_rmse_at_least_mae_every_fold(self, sweep):
        _, report, _ = sweep
        for r in report.results:
            assert r.rmse >= r.mae, (r.model, r.fold)


@pytest.fixture(scope="module")
def benchmark():
    cfg = SynthConfig(exposure=1e5, years=(2012, 2019), seed=1)
    ds = generate_synthetic(cfg)
    folds = make_folds((2012, 2019), 2015, 2019)
    start = time.perf_counter()
    specs = [DESK_SPECS[f] for f in ("lc", "fnn", *TREE_FAMILIES)]
    report = ts_cross_validate(ds, specs, folds, seed=0)
    return noise_floor(cfg, ds, folds), report, len(cfg.age_grid), time.perf_counter() - start


@pytest.mark.criterion(10, "synthetic benchmark: noise floor and stepped tree curves", 600)
class TestCriterion10Benchmark:
    @pytest.mark.parametrize("family", ["lc", "fnn"])
    def test_within_three_noise_floors(self, benchmark, family):
        floor, report, _, _ = benchmark
        assert floor > 0
        assert report.mean_metrics(family)[0] < 3 * floor

    @pytest.mark.parametrize("family", TREE_FAMILIES)
    def test_tree_curves_are_stepped(self, benchmark, family):
        _, report, n_ages, _ = benchmark
        for r in report.for_model(family):
            for key, (distinct, cells) in distinct_per_gender_year(r).items():
                assert cells == n_ages
                assert distinct < n_ages, (family, key, distinct)

    def test_runtime(self, benchmark):
        assert benchmark[3] < 600


@pytest.mark.criterion(11, "actuarial closed forms", 5)
class TestCriterion11Actuarial:
    @staticmethod
    def constant_table(p, n=3000):
        q = np.full(n + 1, 1 - p)
        q[-1] = 1.0
        return LifeTableSlice(np.arange(n + 1), q)

    def test_geometric_forms(self):
        for p in (0.6, 0.9, 0.98):
            t = self.constant_table(p)
            assert abs(life_expectancy(t, 0) - geometric_life_expectancy(p)) < 1e-10
            for r in (0.0, 0.02, 0.05):
                cfg = AnnuityConfig(r)
                assert abs(annuity_value(t, 0, cfg) - geometric_annuity(p, cfg.v)) < 1e-10

    def test_zero_interest_identity(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=int(rng.integers(2, 30)))
            q[-1] = 1.0
            t = LifeTableSlice(np.arange(60, 60 + len(q)), q)
            assert annuity_value(t, 60, AnnuityConfig(0.0)) == life_expectancy(t, 60) - 0.5

    def _surface(self):
        ages = np.arange(60, 96)
        m = np.exp(-10 + 0.09 * ages)
        mm = np.broadcast_to(np.stack([m, 1.3 * m])[:, :, None], (2, len(ages), 50)).copy()
        return ages, m, RateSurface(ages, np.arange(2021, 2071), mm, np.zeros(mm.shape, bool))

    def test_provision_linearity(self):
        ages, _, s = self._surface()
        rng = np.random.default_rng(5)
        E1, E2 = rng.uniform(0, 10, (2, 2, len(ages)))
        total = lambda E: aggregate_provision(E, s, 2021)["total"]
        assert abs(total(E1 + 3 * E2) - total(E1) - 3 * total(E2)) < 1e-10 * total(E1 + 3 * E2)

    def test_static_basis_equivalence(self):
        ages, m, s = self._surface()
        E = np.vstack([np.linspace(80, 5, len(ages)), np.linspace(40, 2, len(ages))])
        dyn = aggregate_provision(E, s, 2021)
        for g, scale in ((0, 1.0), (1, 1.3)):
            stat = static_provision(E[g], ages, LifeTableSlice.from_rates(ages, scale * m))
            assert abs(dyn["MF"[g]] - stat) < 1e-10 * dyn["total"]

    def test_cash_flow_mass_balance(self):
        rng = np.random.default_rng(6)
        ages = np.arange(60, 80)
        m = rng.uniform(0.001, 0.4, size=(2, len(ages), 8))
        s = RateSurface(ages, np.arange(2021, 2029), m, np.zeros(m.shape, bool))
        base = rng.uniform(0, 100, size=(2, len(ages)))
        proj = project_exposure(base, s, 2021, 7, omega=None)
        np.testing.assert_array_equal(proj.exposure[:, :, 0], base)
        for g in range(2):
            q = rates_to_q(m[g])
            for k in range(7):
                np.testing.assert_array_equal(proj.exposure[g, 1:, k + 1],
                                              proj.exposure[g, :-1, k] * (1.0 - q[:-1, k]))
                assert proj.exposure[g, 0, k + 1] == 0.0


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.criterion(12, "CLI reruns from manifests are byte-identical", 120)
class TestCriterion12Determinism:
    def test_every_command(self, tmp_path):
        synth = tmp_path / "synth"
        runs = [
            ["--out-dir", str(synth), "--seed", "3", "synth", "--age-max", "60", "--year-max", "2019"],
            ["--out-dir", str(tmp_path / "rates"), "rates", "--data", str(synth / "dataset.csv")],
            ["--out-dir", str(tmp_path / "cv"), "--jobs", "2", "cv", "--data", str(synth / "dataset.csv"),
             "--models", "oracle;rf:n_trees=5;xgb:rounds=20;cat:rounds=20;fnn:epochs=20;"
                         "lstm-1:epochs=3;mha-3:epochs=3;lc",
             "--first-train-end", "2016"],
            ["--out-dir", str(tmp_path / "fc"), "forecast", "--data", str(synth / "dataset.csv"),
             "--model", "bst:rounds=30", "--horizon", "5"],
            ["--out-dir", str(tmp_path / "apps"), "apps", "--data", str(synth / "dataset.csv"),
             "--forecast", str(tmp_path / "fc" / "forecast.csv"), "--valuation-year", "2016",
             "--min-age", "40", "--e-age", "40", "--observed", str(synth / "dataset.csv")],
        ]
        for args in runs:
            assert main(args) == 0, args
        for name in ("synth", "rates", "cv", "fc", "apps"):
            out = tmp_path / name
            again = tmp_path / f"{name}-again"
            assert main(["--config", str(out / "manifest.txt"), "--out-dir", str(again)]) == 0
            assert _files(again) == _files(out), name
        serial = tmp_path / "cv-serial"
        assert main(["--config", str(tmp_path / "cv" / "manifest.txt"), "--out-dir", str(serial),
                     "--jobs", "1"]) == 0
        for name in ("summary.csv", "summary.json", "residuals_fnn.csv"):
            assert (serial / name).read_bytes() == (tmp_path / "cv" / name).read_bytes()
