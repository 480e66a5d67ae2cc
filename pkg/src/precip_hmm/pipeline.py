"""Command implementations: fit, assess, crossval, trend, simulate, impute.

Each command is a deterministic function of the config, the input files
and the seed. Random streams are keyed by (seed, purpose, chain, draw) so
results do not depend on worker count or evaluation order.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import RunConfig, dumps
from .evaluation import EvalReport, HoldoutPlan, full_year_nll, one_day_ahead_nll, waic_yearly, write_table2
from .ghcn import DailySeries, IngestError, ParseError, Season, load_series, series_to_records, write_csv_records
from .inference import (ChainConfig, InitializationError, LikelihoodEvaluator, PosteriorSamples, ffbs_impute,
                        model_from_metadata, run_chains)
from .model import HmmModel
from .predictive import AssessmentAccumulator, simulate_series, write_assessment
from .synthetic import synthetic_station
from .trend import (MetricSeries, effective_period, mann_kendall, metric_by_year, metric_label,
                    posterior_slope_summary, rubin_combine, sens_slope, write_results)

logger = logging.getLogger(__name__)

# stream tags for per-purpose random generators
_SIM, _IMPUTE, _TREND_SIM, _SIMULATE = 11, 12, 13, 14


class InputError(RuntimeError):
    """Unreadable or inconsistent input data or artifacts."""


class OutputError(RuntimeError):
    """Output location cannot be written."""


def _rng(seed: int, tag: int, chain: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, chain, i])


def load_data(cfg: RunConfig) -> DailySeries:
    d = cfg.data
    try:
        return load_series(d.path, d.season, (d.first_year, d.last_year), format=d.format or None,
                           station_id=d.station_id or None)
    except FileNotFoundError:
        raise InputError(f"data file {d.path} not found") from None
    except (ParseError, IngestError) as exc:
        raise InputError(f"{d.path}: {exc}") from None


def _prepare_output(out: Path, cfg: RunConfig) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        # paths relative to the output directory keep the copy reloadable and location independent
        data = replace(cfg.data, path=os.path.relpath(Path(cfg.data.path).resolve(), out.resolve()))
        copy = replace(cfg, output=".", data=data)
        (out / "config.toml").write_text(dumps(copy))
    except OSError as exc:
        raise OutputError(f"cannot write to {out}: {exc}") from None


def chain_config(cfg: RunConfig, overrides: dict | None = None) -> ChainConfig:
    return ChainConfig(**{**asdict(cfg.chains), **(overrides or {}), "seed": cfg.seed})


def _load_samples(out: Path, data: DailySeries, directory: Path | None = None) -> tuple[PosteriorSamples, HmmModel]:
    sdir = directory or out / "samples"
    try:
        samples = PosteriorSamples.load(sdir)
    except FileNotFoundError as exc:
        raise InputError(f"{exc}; run 'fit' first") from None
    meta = samples.metadata
    if (meta["n_years"], meta["n_days"]) != (data.n_years, data.max_days) or meta["years"] != data.years:
        raise InputError(f"samples in {sdir} were fit to a different year/day grid than the configured data")
    if meta.get("data_fingerprint") != data.fingerprint():
        logger.warning("data differ from those the samples were fit to")
    return samples, model_from_metadata(meta)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x: float) -> str:
    x = float(x)
    return "NA" if not np.isfinite(x) else f"{x:.6g}"


# ---------------------------------------------------------------------------
# fit

def cmd_fit(cfg: RunConfig, resume: bool = False) -> PosteriorSamples:
    data = load_data(cfg)
    out = Path(cfg.output)
    _prepare_output(out, cfg)
    model = HmmModel.build(cfg.model, data.n_years, data.max_days)
    cc = chain_config(cfg)
    samples = run_chains(data, model, cc, outdir=out / "samples", workers=cfg.workers, resume=resume)
    _write_fit_log(out / "samples" / "fit_log.txt", samples, model, data, cc)
    return samples


def _write_fit_log(path: Path, samples: PosteriorSamples, model: HmmModel, data: DailySeries, cc: ChainConfig):
    lines = [f"station {data.station_id} season {data.season.value} years {data.years[0]}-{data.years[-1]}",
             f"family {model.family} season_terms {model.spec.season_terms} year_terms {model.spec.year_terms}",
             f"parameters {model.layout.size} chains {cc.n_chains} iterations {cc.n_iterations} "
             f"burn_in {cc.burn_in} thin {cc.thin} saved_per_chain {samples.n_draws}"]
    if samples.acceptance is not None:
        for c, acc in enumerate(samples.acceptance):
            lines.append(f"chain {c + 1}: acceptance min {acc.min():.3f} median {np.median(acc):.3f} max {acc.max():.3f}")
    path.write_text("\n".join(lines) + "\n")


def parameter_summary(samples: PosteriorSamples) -> list[list[str]]:
    rows = []
    for j, name in enumerate(samples.names):
        x = samples.draws[:, :, j].T
        with np.errstate(all="ignore"):
            r = diag.rhat(x) if samples.n_draws >= 4 else float("nan")
            eb = diag.ess(x, "bulk") if samples.n_draws >= 4 else float("nan")
        q = np.quantile(x, [0.05, 0.5, 0.95])
        rows.append([name, _g(x.mean()), _g(x.std()), _g(q[0]), _g(q[1]), _g(q[2]), _g(r), _g(eb)])
    return rows


# ---------------------------------------------------------------------------
# posterior-predictive ensembles

def select_draws(samples: PosteriorSamples, n: int) -> list[tuple[int, int]]:
    """Chain-major (chain, draw) pairs, evenly spaced, ``n`` in total (0 = all)."""
    per = samples.n_draws if n <= 0 else max(1, -(-n // samples.n_chains))
    per = min(per, samples.n_draws)
    idx = np.unique(np.round(np.linspace(0, samples.n_draws - 1, per)).astype(int))
    return [(c, int(i)) for c in range(samples.n_chains) for i in idx]


def cmd_assess(cfg: RunConfig) -> dict:
    data = load_data(cfg)
    out = Path(cfg.output)
    samples, model = _load_samples(out, data)
    _prepare_output(out, cfg)
    a = cfg.assess
    acc = AssessmentAccumulator(data, a.cutoff, a.omit_fraction, a.max_qq_points)
    ev = LikelihoodEvaluator(model, data)
    picks = select_draws(samples, a.n_simulations)
    metrics = {"mean_dsl": [], "intensity": []}
    for c, i in picks:
        sim = simulate_series(samples.params(model, c, i), data, _rng(cfg.seed, _SIM, c, i), ev)
        acc.add(sim)
        for m in metrics:
            metrics[m].append(metric_by_year(sim.values, data.day_count, m, a.cutoff))
    res = acc.finish()
    adir, ddir = out / "assessment", out / "diagnostics"
    write_assessment(res, adir)
    ddir.mkdir(parents=True, exist_ok=True)

    label = f"{data.station_id}, {data.season.value}"
    n_chains = samples.n_chains
    per_chain = len(picks) // n_chains
    enough = per_chain >= 4 and n_chains >= 1
    if enough:
        row = {"location_season": label, **diag.table_a1_row(res.per_sim, n_chains)}
    else:
        row = {"location_season": label, **{col: "NA" for _, col in diag.TABLE_A1_COLUMNS}}
    diag.write_table([row], ddir / "tableA1_rhat_percentiles.csv")
    period = tuple(cfg.trend.periods[0])
    used = effective_period(data.years, period)
    t1 = {"location_season": label, "period": f"{period[0]}-{period[1]}",
          "years_used": f"{used[0]}-{used[1]}" if used else "NA"}
    for m, vals in metrics.items():
        summary = posterior_slope_summary(np.array(vals), data.years, used, m) if used else None
        d = diag.slope_diagnostics(summary.slopes, n_chains) if (summary is not None and enough) else {}
        for k in ("rhat", "ess_bulk", "ess_tail"):
            v = d.get(k, float("nan"))
            t1[f"{m}_{k}"] = "NA" if not np.isfinite(v) else (f"{v:.3f}" if k == "rhat" else f"{v:.0f}")
    diag.write_table([t1], ddir / "table1_sen_slope_diagnostics.csv")
    _write_rows(ddir / "parameter_summary.csv",
                ("parameter", "mean", "sd", "q05", "median", "q95", "rhat", "ess_bulk"), parameter_summary(samples))
    if not enough:
        logger.warning("fewer than 4 simulations per chain; R-hat tables need more draws")
    return {"assessment": res, "n_simulations": len(picks)}


# ---------------------------------------------------------------------------
# cross-validation

def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def cmd_crossval(cfg: RunConfig, resume: bool = False) -> list[EvalReport]:
    data = load_data(cfg)
    out = Path(cfg.output)
    plan = HoldoutPlan(list(cfg.crossval.held_years))
    try:
        train = plan.train(data)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _prepare_output(out, cfg)
    cc = chain_config(cfg, cfg.crossval.chains)
    reports = []
    for v in cfg.crossval.variants:
        spec = replace(cfg.model, family=v.family, year_terms=v.year_terms)
        model = HmmModel.build(spec, data.n_years, data.max_days)
        sdir = out / "crossval" / _slug(v.label)
        samples = run_chains(train, model, cc, outdir=sdir, workers=cfg.workers, resume=resume)
        waic, p_waic = waic_yearly(samples.flat_year_loglik())
        reports.append(EvalReport(v.label, one_day_ahead_nll(samples, model, data, plan),
                                  full_year_nll(samples, model, data, plan), waic, p_waic))
        logger.info("%s: one-day %.1f full-year %.1f WAIC %.1f", v.label, reports[-1].one_day.mean,
                    reports[-1].full_year.mean, waic)
    write_table2(reports, out / "crossval" / "table2_model_comparison.csv", data.station_id, data.season.value)
    return reports


# ---------------------------------------------------------------------------
# trend

def cmd_trend(cfg: RunConfig) -> dict:
    data = load_data(cfg)
    out = Path(cfg.output)
    samples, model = _load_samples(out, data)
    _prepare_output(out, cfg)
    t = cfg.trend
    metrics = cfg.trend_metrics()
    tdir = out / "trend"
    tdir.mkdir(parents=True, exist_ok=True)
    ev = LikelihoodEvaluator(model, data)
    years = np.array(data.years)

    # imputation path: one FFBS completion per selected draw
    imp_picks = select_draws(samples, t.n_imputations)
    imputed = {m: [] for m in metrics}
    needs_fill = bool((data.missing & data.in_season).any())
    for c, i in imp_picks:
        if needs_fill:
            _, completed = ffbs_impute(samples.params(model, c, i), data, _rng(cfg.seed, _IMPUTE, c, i), ev)
        else:
            completed = data.values
        for m in metrics:
            imputed[m].append(metric_by_year(completed, data.day_count, m, t.cutoff, t.k))

    # Bayesian path: metrics of full simulated records
    sim_picks = select_draws(samples, t.n_simulations)
    simulated = {m: [] for m in metrics}
    for c, i in sim_picks:
        sim = simulate_series(samples.params(model, c, i), data, _rng(cfg.seed, _TREND_SIM, c, i), ev)
        for m in metrics:
            simulated[m].append(metric_by_year(sim.values, data.day_count, m, t.cutoff, t.k))

    mi_rows, bayes_rows, slope_rows, year_rows = [], [], [], []
    observed = {m: metric_by_year(data.values, data.day_count, m, t.cutoff, t.k) for m in metrics}
    any_missing = (data.missing & data.in_season).sum(axis=1)
    for m in metrics:
        label = metric_label(m, t.k)
        imp = np.array(imputed[m])
        sims = np.array(simulated[m])
        for y_i, y in enumerate(years):
            col = imp[:, y_i]
            fin = col[np.isfinite(col)]
            year_rows.append([label, int(y), _g(observed[m][y_i]), _g(fin.mean() if fin.size else np.nan),
                              _g(np.quantile(fin, 0.05) if fin.size else np.nan),
                              _g(np.quantile(fin, 0.95) if fin.size else np.nan), int(any_missing[y_i])])
        for period in t.periods:
            period = (int(period[0]), int(period[1]))
            used = effective_period(data.years, period)
            if used is None or used[1] - used[0] + 1 < 4:
                logger.warning("period %s: fewer than 4 data years, skipped", period)
                continue
            sel = (years >= used[0]) & (years <= used[1])
            tests, slopes = [], []
            for row in imp:
                ms = MetricSeries(label, years[sel], row[sel], "imputation")
                if np.isfinite(ms.values).sum() < 4:
                    continue
                tests.append(mann_kendall(ms))
                slopes.append(sens_slope(ms))
            if tests:
                r = rubin_combine(tests, slopes, label, period, int(np.isfinite(imp[0][sel]).sum()))
                mi_rows.append((r, used))
            s = posterior_slope_summary(sims, years, period, label)
            bayes_rows.append((s, used))
            for (c, i), v in zip(sim_picks, s.slopes):
                slope_rows.append([label, f"{period[0]}-{period[1]}", c + 1, i + 1, _g(v)])
    write_results(tdir / "fig4_sen_slope_results.csv", data.station_id, data.season.value, mi_rows, bayes_rows)
    _write_rows(tdir / "fig5_posterior_slope_samples.csv", ("metric", "period", "chain", "draw", "sen_slope_per_decade"),
                slope_rows)
    _write_rows(tdir / "fig3_metrics_by_year.csv",
                ("metric", "year", "observed", "imputed_mean", "imputed_q05", "imputed_q95", "missing_days"), year_rows)
    return {"mi": mi_rows, "bayes": bayes_rows}


# ---------------------------------------------------------------------------
# simulate / impute

def _write_series_table(path: Path, data: DailySeries, series: list[tuple[int, int, np.ndarray]], kind: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([kind, "chain", "draw", "year", "day_of_season", "date", "prcp_cm", "was_missing"])
        for k, (c, i, vals) in enumerate(series):
            for t, y in enumerate(data.years):
                for s in range(int(data.day_count[t])):
                    w.writerow([k + 1, c + 1, i + 1, y, s + 1, data.date_of(t, s).isoformat(), _g(vals[t, s]),
                                int(data.missing[t, s])])


def cmd_simulate(cfg: RunConfig, n: int = 10) -> Path:
    data = load_data(cfg)
    out = Path(cfg.output)
    samples, model = _load_samples(out, data)
    _prepare_output(out, cfg)
    ev = LikelihoodEvaluator(model, data)
    picks = select_draws(samples, n)[:n] if n > 0 else select_draws(samples, 0)
    series = [(c, i, simulate_series(samples.params(model, c, i), data, _rng(cfg.seed, _SIMULATE, c, i), ev).values)
              for c, i in picks]
    (out / "simulate").mkdir(exist_ok=True)
    path = out / "simulate" / "simulated_series.csv"
    _write_series_table(path, data, series, "simulation")
    return path


def cmd_impute(cfg: RunConfig, n: int = 10) -> Path:
    data = load_data(cfg)
    out = Path(cfg.output)
    samples, model = _load_samples(out, data)
    _prepare_output(out, cfg)
    ev = LikelihoodEvaluator(model, data)
    picks = select_draws(samples, n)[:n] if n > 0 else select_draws(samples, 0)
    series = []
    for c, i in picks:
        _, completed = ffbs_impute(samples.params(model, c, i), data, _rng(cfg.seed, _IMPUTE, c, i), ev)
        series.append((c, i, completed))
    (out / "impute").mkdir(exist_ok=True)
    path = out / "impute" / "imputed_series.csv"
    _write_series_table(path, data, series, "imputation")
    return path


def cmd_synthetic(path: str | Path, n_years: int = 20, first_year: int = 2002, season: str = "JJA",
                  family: str = "gamma", seed: int = 0, missing_rate: float = 0.0) -> Path:
    """Write a synthetic station CSV drawn from the default constant model."""
    series, params = synthetic_station(n_years, first_year, Season(season), family, seed, missing_rate)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv_records(series_to_records(series), path)
    truth = path.with_suffix(".truth.json")
    truth.write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


NUMERICAL_ERRORS = (InitializationError, FloatingPointError, np.linalg.LinAlgError)
