import csv
import time

import numpy as np
import pytest
import tomli

from precip_hmm import pipeline
from precip_hmm.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, EXIT_OUTPUT, run
from precip_hmm.config import ConfigError, RunConfig, dumps, from_dict, load_config
from precip_hmm.inference import InitializationError, PosteriorSamples

TINY = """
output = "out"
seed = 3

[data]
path = "station.csv"
season = "JJA"
first_year = 2002
last_year = 2007

[model]
k_season = 4
k_year = 3

[chains]
n_iterations = 24
burn_in = 8
thin = 4
n_chains = 2
adaptation_interval = 8

[assess]
n_simulations = 6

[crossval]
held_years = [2004]
chains = { n_iterations = 12, burn_in = 4 }

[trend]
periods = [[2002, 2007], [1950, 1960]]
n_imputations = 3
n_simulations = 3
"""


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    d = tmp_path_factory.mktemp("desk")
    assert run(["synthetic", str(d / "station.csv"), "--years", "6", "--seed", "2", "--missing-rate", "0.05"]) == 0
    (d / "desk.toml").write_text(TINY)
    return d


def test_full_pipeline(desk):
    cfg = str(desk / "desk.toml")
    for cmd in ("fit", "assess", "crossval", "trend", "simulate", "impute"):
        assert run([cmd, "--config", cfg]) == EXIT_OK, cmd
    out = desk / "out"
    for rel in ("config.toml", "samples/chain_01.csv", "samples/chain_02.csv", "samples/loglik_01.csv",
                "samples/metadata.json", "assessment/fig1_qq_precip.csv", "assessment/figA12_qq_dsl.csv",
                "diagnostics/tableA1_rhat_percentiles.csv", "diagnostics/table1_sen_slope_diagnostics.csv",
                "crossval/table2_model_comparison.csv", "trend/fig4_sen_slope_results.csv",
                "trend/fig5_posterior_slope_samples.csv", "trend/fig3_metrics_by_year.csv",
                "simulate/simulated_series.csv", "impute/imputed_series.csv"):
        assert (out / rel).exists(), rel
    samples = PosteriorSamples.load(out / "samples")
    assert samples.draws.shape[:2] == (2, 4)
    with open(out / "crossval" / "table2_model_comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    with open(out / "trend" / "fig4_sen_slope_results.csv") as fh:
        rows = list(csv.DictReader(fh))
    # the period outside the data is skipped
    assert {r["period"] for r in rows} == {"2002-2007"}
    assert {r["method"] for r in rows} == {"imputation_MI", "bayes_posterior"}
    # the stored config reloads to the same settings
    again = load_config(out / "config.toml")
    assert again.chains == load_config(desk / "desk.toml").chains
    assert again.data.path == load_config(desk / "desk.toml").data.path


def test_rerun_is_deterministic(desk, tmp_path):
    cfg = str(desk / "desk.toml")
    assert run(["fit", "--config", cfg, "--output", str(tmp_path / "a")]) == EXIT_OK
    assert run(["fit", "--config", cfg, "--output", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "samples" / "chain_01.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples" / "chain_01.csv").read_bytes()
    assert run(["fit", "--config", cfg, "--output", str(tmp_path / "c"), "--seed", "99"]) == EXIT_OK
    assert a != (tmp_path / "c" / "samples" / "chain_01.csv").read_bytes()


def test_exit_codes(desk, tmp_path, monkeypatch):
    bad = tmp_path / "bad.toml"
    bad.write_text(TINY.replace('season = "JJA"', 'season = "XYZ"'))
    assert run(["fit", "--config", str(bad)]) == EXIT_CONFIG
    assert run(["fit", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    unknown = tmp_path / "unknown.toml"
    unknown.write_text(TINY + "\nbogus = 1\n")
    assert run(["fit", "--config", str(unknown)]) == EXIT_CONFIG

    nodata = tmp_path / "nodata.toml"
    nodata.write_text(TINY.replace("station.csv", "missing.csv"))
    assert run(["fit", "--config", str(nodata), "--output", str(tmp_path / "partial")]) == EXIT_INPUT
    assert not (tmp_path / "partial").exists()
    # assess before fit has no samples to read
    assert run(["assess", "--config", str(desk / "desk.toml"), "--output", str(tmp_path / "empty")]) == EXIT_INPUT

    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["fit", "--config", str(desk / "desk.toml"), "--output", str(blocker / "sub")]) == EXIT_OUTPUT

    def fail(*a, **k):
        raise InitializationError("no feasible start")

    monkeypatch.setattr(pipeline, "run_chains", fail)
    assert run(["fit", "--config", str(desk / "desk.toml"), "--output", str(tmp_path / "num")]) == EXIT_NUMERICAL


def test_config_round_trip_and_defaults():
    cfg = from_dict({"data": {"path": "x.csv", "season": "WET_NOV_APR"}})
    assert cfg.trend_metrics() == ["wet_spell_count", "mean_wet_spell_precip", "max_kday_precip"]
    assert cfg.chains.draws_per_chain * cfg.chains.n_chains == 7500
    back = from_dict(tomli.loads(dumps(cfg)))
    assert back == cfg
    assert from_dict({"data": {"path": "x.csv"}}).trend_metrics() == ["mean_dsl", "intensity"]


@pytest.mark.parametrize("d", [
    {"data": {"season": "JJA"}},
    {"data": {"path": "x", "format": "xml"}},
    {"data": {"path": "x"}, "trend": {"metrics": ["median"]}},
    {"data": {"path": "x"}, "trend": {"periods": [[2000, 1990]]}},
    {"data": {"path": "x"}, "chains": {"n_iterations": 10, "burn_in": 20}},
    {"data": {"path": "x"}, "crossval": {"variants": [{"label": "a", "family": "normal"}]}},
    {"data": {"path": "x"}, "model": {"k_season": 4, "colour": 1}},
])
def test_config_errors(d):
    with pytest.raises(ConfigError):
        from_dict(d)


def test_relative_data_path(tmp_path):
    (tmp_path / "c.toml").write_text('[data]\npath = "sub/s.csv"\n')
    cfg = load_config(tmp_path / "c.toml")
    assert cfg.data.path == str((tmp_path / "sub" / "s.csv").resolve())
    assert cfg.output == str((tmp_path / "output").resolve())
    assert isinstance(cfg, RunConfig)


def test_synthetic_csv_readable(tmp_path):
    path = tmp_path / "s.csv"
    assert run(["synthetic", str(path), "--years", "3", "--seed", "1"]) == EXIT_OK
    from precip_hmm.ghcn import load_series

    s = load_series(path, "JJA", (2002, 2004))
    assert s.values.shape == (3, 92) and np.isfinite(s.values[s.observed]).all()


@pytest.mark.slow
def test_desk_fit_time(tmp_path):
    assert run(["synthetic", str(tmp_path / "station.csv"), "--years", "20", "--seed", "4"]) == EXIT_OK
    (tmp_path / "c.toml").write_text('[data]\npath = "station.csv"\nfirst_year = 2002\nlast_year = 2021\n'
                                      "[model]\nk_season = 8\nk_year = 5\n"
                                      "[chains]\nn_iterations = 2000\nburn_in = 1000\nthin = 5\nn_chains = 2\n")
    start = time.perf_counter()
    assert run(["fit", "--config", str(tmp_path / "c.toml"), "--workers", "1"]) == EXIT_OK
    assert time.perf_counter() - start < 600
