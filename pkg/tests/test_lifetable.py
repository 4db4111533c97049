import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mortlearn.data import MortalityDataset, RateSurface
from mortlearn.exceptions import DataError
from mortlearn.lifetable import (
    AnnuityConfig,
    LifeTableSlice,
    aggregate_provision,
    annuity_value,
    cohort_path,
    compare_projection,
    extend_to_omega,
    hold_last_year,
    life_expectancy,
    load_static_table,
    period_life_expectancy,
    project_exposure,
    rates_to_q,
    static_provision,
)

from oracles import geometric_annuity, geometric_life_expectancy


def constant_table(p, n=400, start=0):
    q = np.full(n + 1, 1 - p)
    q[-1] = 1.0
    return LifeTableSlice(np.arange(start, start + n + 1), q)


def surface(m, ages, years):
    m = np.asarray(m, dtype=float)
    return RateSurface(np.asarray(ages), np.asarray(years), m, np.isnan(m))


def flat_surface(m_by_age, ages, years):
    m = np.broadcast_to(np.asarray(m_by_age, dtype=float)[:, :, None], (2, len(ages), len(years)))
    return surface(np.array(m), ages, years)


q_lists = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20)


def slice_of(qs):
    q = np.array(qs)
    q[-1] = 1.0
    return LifeTableSlice(np.arange(60, 60 + len(q)), q)


class TestConversion:
    def test_examples(self):
        assert rates_to_q(0.0) == 0.0
        assert rates_to_q(0.01) == pytest.approx(0.00995017, abs=1e-8)
        assert rates_to_q(1e6) == 1.0

    def test_negative(self):
        with pytest.raises(DataError):
            rates_to_q([-0.1])

    def test_extension_is_log_linear(self):
        ages = np.arange(60, 96)
        m = np.exp(-10 + 0.09 * ages)
        ext_ages, ext = extend_to_omega(ages, m[:, None], 100)
        assert ext_ages[-1] == 100 and len(ext) == 41
        np.testing.assert_allclose(ext[-5:, 0], np.exp(-10 + 0.09 * np.arange(96, 101)), rtol=1e-10)

    def test_slice_validation(self):
        with pytest.raises(DataError):
            LifeTableSlice(np.arange(2), np.array([0.1, 0.5]))
        with pytest.raises(DataError):
            LifeTableSlice(np.arange(2), np.array([1.2, 1.0]))
        with pytest.raises(DataError):
            LifeTableSlice(np.array([0, 2]), np.array([0.1, 1.0]))


class TestLifeExpectancy:
    def test_immediate_death(self):
        t = LifeTableSlice(np.arange(60, 70), np.ones(10))
        assert life_expectancy(t, 60) == 0.5
        assert annuity_value(t, 60) == 0.0

    def test_geometric(self):
        for p in (0.5, 0.9, 0.97):
            t = constant_table(p, n=2000)
            assert abs(life_expectancy(t, 0) - geometric_life_expectancy(p)) < 1e-10
            for r in (0.0, 0.03, 0.05):
                cfg = AnnuityConfig(r)
                assert abs(annuity_value(t, 0, cfg) - geometric_annuity(p, cfg.v)) < 1e-10

    def test_paper_style_value(self):
        assert abs(life_expectancy(constant_table(0.9), 0) - 9.5) < 1e-10

    def test_beyond_omega(self):
        with pytest.raises(DataError):
            life_expectancy(constant_table(0.9, n=10), 11)

    @given(q_lists)
    @settings(max_examples=80, deadline=None)
    def test_zero_interest_identity(self, qs):
        t = slice_of(qs)
        assert annuity_value(t, 60, AnnuityConfig(0.0)) == pytest.approx(life_expectancy(t, 60) - 0.5,
                                                                          abs=1e-12)

    @given(q_lists, st.floats(0.0, 0.2))
    @settings(max_examples=80, deadline=None)
    def test_annuity_bounded_by_curtate(self, qs, r):
        t = slice_of(qs)
        assert annuity_value(t, 60, AnnuityConfig(r)) <= life_expectancy(t, 60) - 0.5 + 1e-12

    # a coarse grid keeps every effect well above rounding level
    @given(st.lists(st.integers(0, 10).map(lambda k: k / 20), min_size=2, max_size=20), st.data())
    @settings(max_examples=80, deadline=None)
    def test_raising_q_lowers_values(self, qs, data):
        t = slice_of(qs)
        n = len(qs)
        j = data.draw(st.integers(0, n - 2))
        x = data.draw(st.integers(0, j)) + 60
        bump = data.draw(st.integers(1, 20)) / 20
        q2 = np.array(t.q)
        q2[j] = min(1.0, q2[j] + bump)
        t2 = LifeTableSlice(t.ages, q2)
        assert life_expectancy(t2, x) < life_expectancy(t, x)
        assert annuity_value(t2, x) < annuity_value(t, x)

    def test_period_table(self):
        ages = np.arange(60, 101)
        s = flat_surface(np.full((2, len(ages)), 0.1), ages, [2022, 2023])
        rows = period_life_expectancy(s, [2022, 2023], x=60)
        expected = 0.5 + sum(np.exp(-0.1) ** k for k in range(1, 41))
        assert rows[0][0] == 2022 and rows[0][1] == pytest.approx(expected, abs=1e-12)


class TestProvision:
    def _setup(self):
        ages = np.arange(60, 96)
        m = np.exp(-10 + 0.09 * ages)
        years = np.arange(2021, 2021 + 60)
        return ages, m, flat_surface(np.vstack([m, 1.2 * m]), ages, years)

    def test_static_basis_equivalence(self):
        ages, m, s = self._setup()
        E = np.vstack([np.linspace(100, 10, len(ages)), np.linspace(50, 5, len(ages))])
        dyn = aggregate_provision(E, s, 2021)
        for g, scale in ((0, 1.0), (1, 1.2)):
            table = LifeTableSlice.from_rates(ages, scale * m)
            assert abs(dyn["MF"[g]] - static_provision(E[g], ages, table)) < 1e-10 * dyn["total"]
        assert dyn["total"] == pytest.approx(dyn["M"] + dyn["F"], rel=1e-15)

    def test_linearity(self):
        ages, _, s = self._setup()
        one = np.zeros((2, len(ages)))
        one[0, 5] = 1
        single = aggregate_provision(one, s, 2021)["total"]
        assert aggregate_provision(2 * one, s, 2021)["total"] == pytest.approx(2 * single, rel=1e-15)
        other = np.zeros((2, len(ages)))
        other[1, 9] = 3
        both = aggregate_provision(one + other, s, 2021)["total"]
        assert abs(both - single - aggregate_provision(other, s, 2021)["total"]) < 1e-10

    def test_life_at_omega(self):
        ages = np.arange(96, 101)
        s = flat_surface(np.full((2, 5), 0.3), ages, np.arange(2021, 2030))
        E = np.zeros((2, 5))
        E[0, -1] = 1
        assert aggregate_provision(E, s, 2021)["total"] == 0.0

    def test_dynamic_uses_diagonal(self):
        ages = np.arange(98, 101)
        m = np.zeros((2, 3, 3))
        m[:, 0, 0] = 0.2
        m[:, 1, 1] = 0.4
        s = surface(m, ages, [2021, 2022, 2023])
        np.testing.assert_allclose(cohort_path(s, 0, 98, 2021),
                                   [1 - np.exp(-0.2), 1 - np.exp(-0.4), 1.0])

    def test_missing_horizon_named(self):
        ages, _, s = self._setup()
        short = s.restrict_years(2021, 2030)
        with pytest.raises(DataError, match=r"\(M, 70, 2031\)"):
            aggregate_provision(np.ones((2, len(ages))), short, 2021)

    def test_hold_last_year(self):
        ages, _, s = self._setup()
        ext = hold_last_year(s.restrict_years(2021, 2023), 2030)
        assert ext.years[-1] == 2030
        np.testing.assert_array_equal(ext.m[:, :, -1], s.m[:, :, 2])


class TestProjection:
    def test_zero_q_translates(self):
        ages = np.arange(60, 65)
        s = flat_surface(np.zeros((2, 5)), ages, np.arange(2021, 2025))
        base = np.array([[1.0, 2, 3, 4, 5], [5.0, 4, 3, 2, 1]])
        proj = project_exposure(base, s, 2021, 3, omega=None)
        for k in range(4):
            np.testing.assert_array_equal(proj.exposure[:, k:, k], base[:, : 5 - k])
            assert np.all(proj.exposure[:, :k, k] == 0)

    def test_unit_q_empties(self):
        ages = np.arange(60, 65)
        s = flat_surface(np.full((2, 5), np.inf), ages, np.arange(2021, 2025))
        proj = project_exposure(np.ones((2, 5)), s, 2021, 3, omega=None)
        assert np.all(proj.exposure[:, :, 1:] == 0)

    def test_hand_recurrence(self):
        q = np.array([[0.1, 0.2], [0.3, 0.4]])  # [age, year]
        m = -np.log(1 - q)
        s = surface(np.stack([m, m]), [60, 61], [2021, 2022])
        proj = project_exposure(np.array([[100.0, 50.0], [10.0, 0.0]]), s, 2021, 2, omega=None)
        expected_m = np.array([[100.0, 0.0, 0.0], [50.0, 90.0, 0.0]])
        assert np.max(np.abs(proj.exposure[0] - expected_m)) <= 1e-12
        np.testing.assert_allclose(proj.totals(), [160.0, 99.0, 0.0], atol=1e-12)

    def test_mass_balance(self):
        rng = np.random.default_rng(0)
        ages = np.arange(60, 96)
        m = rng.uniform(0.001, 0.3, size=(2, len(ages), 12))
        s = surface(m, ages, np.arange(2021, 2033))
        base = rng.uniform(0, 100, size=(2, len(ages)))
        proj = project_exposure(base, s, 2021, 10)
        q_grid = 1 - np.exp(-m)
        for g in range(2):
            for a in range(len(ages) - 1):
                for k in range(10):
                    E0 = proj.exposure[g, a, k]
                    assert E0 - proj.exposure[g, a + 1, k + 1] == pytest.approx(E0 * q_grid[g, a, k],
                                                                                 rel=1e-12, abs=1e-12)
        # cohorts only shrink along their diagonal
        for k in range(10):
            assert np.all(proj.exposure[:, 1:, k + 1] <= proj.exposure[:, :-1, k] + 1e-12)

    def test_horizon_checked(self):
        ages = np.arange(60, 65)
        s = flat_surface(np.full((2, 5), 0.01), ages, [2021, 2022])
        with pytest.raises(DataError, match="2023"):
            project_exposure(np.ones((2, 5)), s, 2021, 3, omega=None)
        with pytest.raises(DataError):
            project_exposure(np.ones((2, 4)), s, 2021, 1)


class TestCompare:
    def _proj_and_obs(self, factor=1.0):
        ages = np.arange(60, 70)
        s = flat_surface(np.full((2, 10), 0.02), ages, np.arange(2021, 2025))
        proj = project_exposure(np.full((2, 10), 100.0), s, 2021, 3, omega=None)
        years = proj.years[1:]
        E = proj.exposure[:, :, 1:] / factor
        return proj, MortalityDataset(ages, years, np.zeros_like(E), E)

    def test_identical(self):
        proj, obs = self._proj_and_obs()
        rows = compare_projection(obs, proj)
        assert all(r[5] == pytest.approx(0.0, abs=1e-15) for r in rows if r[5] is not None)

    def test_uniform_half_percent(self):
        proj, obs = self._proj_and_obs(1.005)
        rows = compare_projection(obs, proj)
        assert rows[-1][2] == "total" and rows[-1][5] == pytest.approx(0.005, rel=1e-12)

    def test_bands_sum_to_direct(self):
        proj, obs = self._proj_and_obs()
        rows = compare_projection(obs, proj, band_width=3)
        for gender in "MF":
            for year in (2022, 2023, 2024):
                bands = [r for r in rows if r[0] == gender and r[1] == year and r[2] not in ("all",)]
                whole = [r for r in rows if r[0] == gender and r[1] == year and r[2] == "all"][0]
                assert sum(r[3] for r in bands) == pytest.approx(whole[3], rel=1e-14)
                k = year - 2021
                assert whole[3] == pytest.approx(proj.exposure["MF".index(gender), :, k].sum(), rel=1e-14)

    def test_zero_observed_band_flagged(self):
        proj, obs = self._proj_and_obs()
        E = np.array(obs.exposure)
        E[:, :, :] = 0
        rows = compare_projection(MortalityDataset(obs.ages, obs.years, E, E), proj)
        assert all(r[5] is None for r in rows)


def test_static_table_loader(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("age,q\n60,0.01\n61,0.02\n62,0.5\n")
    t = load_static_table(p)
    np.testing.assert_array_equal(t.q, [0.01, 0.02, 1.0])
    p.write_text("age,q\n60,abc\n")
    with pytest.raises(DataError, match="row 2"):
        load_static_table(p)
