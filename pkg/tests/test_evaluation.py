import math

import numpy as np
import oracles
import pytest
from conftest import make_series, oracle_inputs, random_day_values, random_theta, small_model

from precip_hmm.evaluation import (EvalReport, HoldoutPlan, day_logpred_marginal, day_logpred_one_day,
                                   full_year_nll, one_day_ahead_nll, waic_yearly, write_table2)
from precip_hmm.inference import ChainConfig, PosteriorSamples, run_chains
from precip_hmm.model import TRANSITION_VARS, HmmModel, ModelSpec
from precip_hmm.synthetic import constant_truth, synthetic_station


def _toy(rng, family="gamma", n_years=4):
    m = small_model(family, n_years=n_years, n_days=3, season_terms=False)
    theta = random_theta(m, rng)
    vals = random_day_values(3 * n_years, rng, 0.2).reshape(n_years, 3)
    return m, theta, make_series(vals)


def _one_day_oracle(m, theta, row, t, s):
    obs = [np.nan if np.isnan(x) else x for x in row[: s + 1]]
    P, init, logem = oracle_inputs(m, theta, obs, t)
    upto = oracles.enumerate_loglik(P, init, logem)
    before = oracles.enumerate_loglik(P[:s], init, logem[:s]) if s else 0.0
    return upto - before


def _marginal_oracle(m, theta, row, t, s):
    obs = [np.nan] * s + [row[s]]
    P, init, logem = oracle_inputs(m, theta, obs, t)
    return oracles.enumerate_loglik(P, init, logem)


@pytest.mark.parametrize("family", ["gamma", "gpd"])
def test_day_predictions_match_enumeration(rng, family):
    for _ in range(10):
        m, theta, data = _toy(rng, family)
        params = m.params(theta)
        one = day_logpred_one_day(params, data)
        marg = day_logpred_marginal(params, data)
        for t in range(data.n_years):
            for s in range(3):
                if data.missing[t, s]:
                    assert one[t, s] == 0.0 and marg[t, s] == 0.0
                    continue
                for got, want in ((one[t, s], _one_day_oracle(m, theta, data.values[t], t, s)),
                                  (marg[t, s], _marginal_oracle(m, theta, data.values[t], t, s))):
                    if want == -math.inf:
                        assert got == -math.inf
                    else:
                        assert abs(got - want) < 1e-10


def _samples(m, thetas, n_years):
    draws = np.array(thetas)[None]
    return PosteriorSamples(m.layout.names, draws, np.zeros((1, len(thetas), n_years)))


def test_heldout_scores(rng):
    m, t1, data = _toy(rng, n_years=4)
    t2 = random_theta(m, rng)
    plan = HoldoutPlan([2002, 2004])
    held = plan.held_mask(data)
    assert held.tolist() == [False, True, False, True]
    samples = _samples(m, [t1, t2], 4)
    res = one_day_ahead_nll(samples, m, data, plan)
    per = [-day_logpred_one_day(m.params(t), data)[held].sum() for t in (t1, t2)]
    assert res.mean == pytest.approx(np.mean(per), abs=1e-12)
    assert res.sd == pytest.approx(np.std(per, ddof=1), abs=1e-12)
    full = full_year_nll(samples, m, data, plan)
    per = [-day_logpred_marginal(m.params(t), data)[held].sum() for t in (t1, t2)]
    assert full.mean == pytest.approx(np.mean(per), abs=1e-12)
    single = full_year_nll(_samples(m, [t1], 4), m, data, plan)
    assert single.sd == 0.0


def test_zero_held_days_and_missing_held_year(rng):
    m, theta, data = _toy(rng)
    s = _samples(m, [theta], 4)
    res = one_day_ahead_nll(s, m, data, HoldoutPlan([]))
    assert (res.mean, res.sd) == (0.0, 0.0)
    gap = data.with_years_missing([2002])
    res = full_year_nll(s, m, gap, HoldoutPlan([2002]))
    assert (res.mean, res.sd) == (0.0, 0.0)
    with pytest.raises(ValueError):
        HoldoutPlan([1850]).resolve(data)


def test_certain_dry_prediction():
    m = small_model(n_years=2, n_days=3, season_terms=False, year_terms=False)
    one = 1 - 1e-16
    trans = {v: 0.5 for v in TRANSITION_VARS}
    trans.update(pD1=one, pD2=one, pD3=one)
    p = m.constant_params(trans, [one, 0.5, 0.1], [0.5, 1, 1], [0.1, 1, 2], [1, 1e-30, 1e-30, 1e-30, 1e-30])
    data = make_series(np.zeros((2, 3)))
    s = _samples(m, [p.values], 2)
    for score in (one_day_ahead_nll, full_year_nll):
        assert abs(score(s, m, data, HoldoutPlan([2002])).mean) < 1e-12


def test_impossible_observation_counted():
    m = small_model("gpd", n_years=2, n_days=3, season_terms=False, year_terms=False)
    trans = {v: 0.5 for v in TRANSITION_VARS}
    trans.update(pWD1=0.6, pWD2=0.6)
    # every state has bounded support below 2 cm
    p = m.constant_params(trans, [0.9, 0.5, 0.1], [-0.5, -0.5, -0.5], [0.1, 0.3, 0.9], [0.2] * 5)
    data = make_series([[0.0, 0.3, 0.0], [0.0, 5.0, 0.1]])
    res = one_day_ahead_nll(_samples(m, [p.values], 2), m, data, HoldoutPlan([2002]))
    assert res.n_impossible == 1
    assert math.isfinite(res.mean)


def test_waic_examples(rng):
    w, p = waic_yearly(np.array([[0.0], [-2.0]]))
    assert p == 2.0
    assert w == pytest.approx(-2 * (math.log((1 + math.exp(-2)) / 2) - 2.0), abs=1e-12)
    ow, op = oracles.waic([[0.0], [-2.0]])
    assert w == pytest.approx(ow, abs=1e-12) and p == pytest.approx(op, abs=1e-12)
    ll = rng.normal(-50, 3, (1, 6))
    w, p = waic_yearly(np.repeat(ll, 5, axis=0))
    assert p == pytest.approx(0.0, abs=1e-12) and w == pytest.approx(-2 * ll.sum(), rel=1e-12)


def test_waic_matches_oracle_and_shift(rng):
    for _ in range(20):
        ll = rng.normal(-100, 5, (int(rng.integers(2, 40)), int(rng.integers(1, 8))))
        w, p = waic_yearly(ll)
        ow, op = oracles.waic(ll.tolist())
        assert w == pytest.approx(ow, abs=1e-9) and p == pytest.approx(op, abs=1e-9)
        assert p >= 0
        shifted = ll.copy()
        shifted[:, 0] += 7.5
        w2, p2 = waic_yearly(shifted)
        assert p2 == pytest.approx(p, abs=1e-9)
        assert w2 == pytest.approx(w - 2 * 7.5, abs=1e-9)
    # large magnitudes stay finite
    assert math.isfinite(waic_yearly(np.array([[-1e5, -2e5], [-1e5 - 3, -2e5 + 4]]))[0])
    with pytest.raises(ValueError):
        waic_yearly(np.zeros(3))


def test_table2_layout(tmp_path):
    from precip_hmm.evaluation import ScoreSummary

    rows = [EvalReport("gamma", ScoreSummary(10.0, 1.0), ScoreSummary(12.0, 2.0, 1), 30.0, 3.0),
            EvalReport("gpd", ScoreSummary(11.0, 1.5), ScoreSummary(13.0, 2.5), 31.0, 2.0)]
    path = tmp_path / "t2.csv"
    write_table2(rows, path, "S", "JJA")
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].split(",")[:3] == ["station", "season", "model"]
    assert lines[1].split(",") == ["S", "JJA", "gamma", "10.000", "1.000", "12.000", "2.000", "30.000", "3.000", "1"]


@pytest.mark.slow
def test_waic_prefers_generating_family():
    models = {}
    for family in ("gamma", "gpd"):
        models[family] = HmmModel.build(ModelSpec(family=family, season_terms=False, year_terms=False), 20, 92)
    # a GPD with shape near zero is exponential, which the gamma family contains, so the GPD
    # generator gets a clearly heavy tail
    truths = {"gamma": constant_truth(models["gamma"]),
              "gpd": constant_truth(models["gpd"], shape=(0.1, 0.25, 0.3), scale=(0.04, 0.35, 1.2))}
    wins = 0
    for rep in range(10):
        truth = ("gamma", "gpd")[rep % 2]
        series, _ = synthetic_station(n_years=20, seed=700 + rep, params=truths[truth])
        waic = {}
        for family, model in models.items():
            samples = run_chains(series, model, ChainConfig(n_iterations=1500, burn_in=500, thin=5, n_chains=2,
                                                            seed=rep))
            waic[family], p_waic = waic_yearly(samples.flat_year_loglik())
            assert p_waic >= 0
        other = "gpd" if truth == "gamma" else "gamma"
        wins += waic[truth] < waic[other]
    assert wins >= 8
