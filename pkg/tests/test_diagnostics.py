import math
import warnings

import numpy as np
import oracles
import pytest

from precip_hmm.diagnostics import (DegenerateDrawsWarning, ess, group_rhats, rhat, slope_diagnostics,
                                    summarize_percentiles, table_a1_row, TABLE_A1_COLUMNS)
from precip_hmm import diagnostics


def test_iid_rhat_and_ess(rng):
    x = rng.standard_normal((10000, 4))
    assert 0.999 < rhat(x) < 1.005
    assert abs(ess(x) - 40000) < 4000
    t = ess(x, "tail")
    assert abs(t - 40000) < 4000


def test_ar1_ess(rng):
    rho = 0.9
    x = np.column_stack([oracles.ar1(10000, rho, rng) for _ in range(4)])
    ratio = ess(x) / x.size
    target = (1 - rho) / (1 + rho)
    assert abs(ratio - target) < 0.25 * target


def test_constant_draws():
    with pytest.warns(DegenerateDrawsWarning):
        assert rhat(np.full((100, 2), 3.0)) == 1.0
    with pytest.warns(DegenerateDrawsWarning):
        assert ess(np.full((100, 2), 3.0)) == 200


def test_disjoint_chains(rng):
    x = np.column_stack([rng.standard_normal(5000), 10 + rng.standard_normal(5000)])
    # the raw between/within statistic is far above 2
    assert oracles.classic_split_rhat(x.T) > 2
    assert diagnostics._rhat_plain(diagnostics._split(x)) == pytest.approx(oracles.classic_split_rhat(x.T), rel=1e-10)
    # ranks cap the rank-normalized version: four halves sit at +-E|Z| with within variance 1 - 2/pi
    limit = math.sqrt(1 + (4 / 3) * (2 / math.pi) / (1 - 2 / math.pi))
    assert rhat(x) == pytest.approx(limit, abs=0.01)
    assert rhat(x) > 1.8


def test_monotone_and_permutation_invariance(rng):
    x = rng.standard_normal((400, 3)) + np.array([0, 0.3, 0.1])
    r = rhat(x)
    assert rhat(np.exp(x)) == r
    assert rhat(x ** 3) == r
    assert rhat(x[:, [2, 0, 1]]) == pytest.approx(r, abs=1e-14)


def test_ess_cap(rng):
    x = rng.standard_normal((2000, 4))
    assert ess(x) <= 1.5 * x.size


def test_input_errors():
    with pytest.raises(ValueError):
        rhat(np.zeros(3))
    with pytest.raises(ValueError):
        ess(np.array([[1.0, np.nan]] * 10))
    with pytest.raises(ValueError):
        ess(np.ones((10, 2)) + np.arange(10)[:, None], kind="median")


def test_percentiles(rng):
    assert summarize_percentiles([1.0, 1.1], (50,))[50] == pytest.approx(1.05)
    v = rng.random(37)
    got = summarize_percentiles(v, (50, 99))
    assert got[50] == pytest.approx(oracles.percentile(v, 50), abs=1e-15)
    assert got[99] == pytest.approx(oracles.percentile(v, 99), abs=1e-15)
    assert summarize_percentiles([1.0, np.nan, 3.0], (50,))[50] == 2.0
    with pytest.raises(ValueError):
        summarize_percentiles([np.nan])


def test_group_rhats_and_table(rng):
    per_sim = rng.standard_normal((400, 5))
    per_sim[:, 3] = np.nan
    r = group_rhats(per_sim, 2)
    assert np.isnan(r[3]) and np.all(np.isfinite(r[[0, 1, 2, 4]]))
    # chain-major rows: chain 0 is the first 200 rows
    assert r[0] == rhat(per_sim[:, 0].reshape(2, 200).T)
    row = table_a1_row({k: rng.standard_normal((100, 4)) for k, _ in TABLE_A1_COLUMNS}, 2)
    assert list(row) == [c for _, c in TABLE_A1_COLUMNS]
    assert all("(" in v for v in row.values())


def test_slope_diagnostics(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d = slope_diagnostics(rng.standard_normal(4000), 4)
    assert set(d) == {"rhat", "ess_bulk", "ess_tail"}
    assert d["rhat"] < 1.01
