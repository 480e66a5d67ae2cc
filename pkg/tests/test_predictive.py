import numpy as np
import pytest
from conftest import make_series
from scipy import stats

from precip_hmm.ghcn import DailySeries
from precip_hmm.model import TRANSITION_VARS, HmmModel, ModelSpec
from precip_hmm.predictive import (AssessmentAccumulator, SimulatedSeries, apply_mask, cond_transition,
                                   dry_wet_transition, dsl_lengths, intensity, kday_sums, mean_dsl, prob_exceed,
                                   seasonal_total, simulate_series, spell_lengths, write_assessment)


def _constant(n_years, n_days, trans=None, pi=(0.9, 0.4, 0.05), init=(0.3, 0.3, 0.2, 0.1, 0.1)):
    m = HmmModel.build(ModelSpec(season_terms=False, year_terms=False), n_years, n_days)
    t = {v: 0.5 for v in TRANSITION_VARS}
    t.update(pWD1=0.6, pWD2=0.6)
    t.update(trans or {})
    return m.constant_params(t, list(pi), [0.5, 1.0, 1.5], [0.05, 0.3, 1.0], list(init))


def test_hand_examples():
    assert prob_exceed(np.array([[0, 0.5, 0, 0, 0.2]]), 0.3)[0] == pytest.approx(0.2)
    row = np.array([0, 0, 0.5, 0, 0, 0, 0.4])
    assert spell_lengths(row, 0.3) == [2, 3]
    assert mean_dsl(row[None, :])[0] == 2.5
    assert kday_sums(np.array([[1.0, 2, 3, 4]]), 3).tolist() == [6, 9]
    assert intensity(row[None, :])[0] == pytest.approx(0.45)


def test_missing_days_excluded():
    v = np.array([[0.0, np.nan, 0.5, 2.5], [np.nan] * 4])
    assert prob_exceed(v, 0.3)[0] == pytest.approx(2 / 3)
    assert np.isnan(prob_exceed(v, 0.3)[1])
    assert seasonal_total(v)[0] == 3.0 and np.isnan(seasonal_total(v)[1])
    assert kday_sums(v, 2).tolist() == [3.0]
    assert spell_lengths(v[0], 0.3) == [1]
    by_day = prob_exceed(v, 0.3, "day")
    assert by_day[0] == 0.0 and np.isnan(by_day[1])


def test_dsl_edge_cases():
    D = 91
    assert mean_dsl(np.zeros((1, D)))[0] == D
    one = np.zeros(D)
    one[D // 2] = 1.0
    assert mean_dsl(one[None, :])[0] == pytest.approx((D - 1) / 2)
    assert np.isnan(mean_dsl(np.ones((1, 5)))[0])
    assert dsl_lengths(np.array([[0, 1, 0, 0], [0, 0, 0, 0]])).tolist() == [1, 2, 4]


def test_transition_tables():
    v = np.array([[0.0, 0.5, 2.0, 2.0, 0.1, np.nan, 0.0]])
    ct = cond_transition(v)
    # pairs: dry->moist, moist->wet, wet->wet, wet->dry
    assert ct[0, :, 0].tolist() == [0.0, 1.0, 0.0]
    assert ct[1, :, 0].tolist() == [0.0, 0.0, 1.0]
    assert ct[2, :, 0].tolist() == [0.5, 0.0, 0.5]
    dw = dry_wet_transition(v)
    assert dw["dry_to_dry"][0] == 0.0 and dw["wet_to_dry"][0] == pytest.approx(1 / 3)
    assert ct.shape == (3, 3, 1)
    assert cond_transition(v, "day").shape == (3, 3, 7)


def test_prob_exceed_antitone(rng):
    v = np.where(rng.random((30, 40)) < 0.1, np.nan, rng.gamma(0.5, 1.0, (30, 40)))
    for by in ("year", "day"):
        cs = np.linspace(0, 5, 30)
        p = np.array([prob_exceed(v, c, by) for c in cs])
        assert np.all(np.diff(p, axis=0)[~np.isnan(np.diff(p, axis=0))] <= 0)


def test_kday_count(rng):
    for S in (3, 10, 92):
        for k in (1, 3, 10):
            n = kday_sums(rng.random((2, S)), k).size
            assert n == 2 * max(S - k + 1, 0)


def test_all_dry_model():
    one = 1 - 1e-16
    p = _constant(4, 30, {"pD1": one, "pD2": one, "pD3": one}, pi=(one, 0.4, 0.05),
                  init=(1, 1e-30, 1e-30, 1e-30, 1e-30))
    like = make_series(np.zeros((4, 30)))
    sim = simulate_series(p, like, np.random.default_rng(0))
    assert (sim.values == 0).all()
    assert (sim.states == 0).all()


def test_simulation_deterministic_and_on_grid():
    p = _constant(5, 40)
    like = make_series(np.zeros((5, 40)), day_count=np.array([40, 39, 40, 38, 40]))
    a = simulate_series(p, like, np.random.default_rng(9))
    b = simulate_series(p, like, np.random.default_rng(9))
    assert np.array_equal(a.values, b.values, equal_nan=True)
    assert np.isnan(a.values[1, 39]) and np.isnan(a.values[3, 38:]).all()
    ok = a.values[~np.isnan(a.values)]
    assert (ok >= 0).all()
    assert np.allclose(ok * 100, np.round(ok * 100), atol=1e-9)


def test_transition_frequencies_law_of_large_numbers():
    p = _constant(1000, 1000, {"pD1": 0.8, "pD2": 0.6, "pD3": 0.3, "pW1": 0.4, "pW2": 0.2, "pW12": 0.3,
                               "pW21": 0.6})
    like = make_series(np.zeros((1000, 1000)))
    st = simulate_series(p, like, np.random.default_rng(1)).states
    P = p.transition_matrices()[0, 1]
    prev, cur = st[:, :-1].ravel(), st[:, 1:].ravel()
    counts = np.zeros((5, 5))
    np.add.at(counts, (prev, cur), 1)
    n = counts.sum(axis=1, keepdims=True)
    freq = counts / n
    se = np.sqrt(P * (1 - P) / n)
    assert np.all(np.abs(freq - P) <= 3 * se + 1e-12)


def test_years_exchangeable_under_constant_model():
    p = _constant(20, 60)
    like = make_series(np.zeros((20, 60)))
    rng = np.random.default_rng(2)
    wins = np.zeros(20)
    for _ in range(2000):
        tot = seasonal_total(simulate_series(p, like, rng).values)
        wins[int(np.argmax(tot + 1e-9 * rng.random(20)))] += 1
    assert stats.chisquare(wins).pvalue > 0.01


def _masked_series(missing):
    vals = np.where(missing, np.nan, 0.1)
    return DailySeries("X", "JJA", list(range(2000, 2000 + missing.shape[0])), vals, missing,
                       [missing.shape[1]] * missing.shape[0])


def test_mask_identity_idempotent_and_all_missing(rng):
    sim = SimulatedSeries(rng.random((3, 5)), np.array([5, 5, 5]))
    none = _masked_series(np.zeros((3, 5), bool))
    assert np.array_equal(apply_mask(sim, none).values, sim.values)
    some = _masked_series(rng.random((3, 5)) < 0.4)
    once = apply_mask(sim, some)
    assert np.array_equal(apply_mask(once, some).values, once.values, equal_nan=True)
    assert np.isnan(once.values[some.missing]).all()
    allm = _masked_series(np.ones((3, 5), bool))
    assert np.isnan(apply_mask(sim, allm).values).all()
    with pytest.raises(ValueError):
        apply_mask(SimulatedSeries(np.zeros((2, 5)), np.array([5, 5])), none)


def test_assessment_omission_and_files(tmp_path, rng):
    p = _constant(6, 20)
    vals = np.round(rng.gamma(0.3, 1.0, (6, 20)), 2)
    vals[2, :8] = np.nan  # 40% missing in one year
    data = make_series(vals)
    acc = AssessmentAccumulator(data)
    for _ in range(15):
        acc.add(simulate_series(p, data, rng))
    res = acc.finish()
    st = res.stats["prob_exceed_0.3_by_year"]
    assert st.omitted.tolist() == [False, False, True, False, False, False]
    assert st.sims.shape == (15, 6)
    # observed DSL drops any year with a missing day; simulations stay unmasked
    assert res.stats["mean_dsl_by_year"].omitted[2]
    assert res.qq["daily"].sims.shape[0] == 15
    paths = write_assessment(res, tmp_path)
    assert all(q.exists() for q in paths)
