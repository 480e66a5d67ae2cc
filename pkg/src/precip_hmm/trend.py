"""Yearly precipitation metrics and their trend statistics.

Slopes are computed per year and reported per decade. The Mann-Kendall
arithmetic is exact (integers and fractions) up to the final square root,
so combining identical imputations reproduces the single-series test bit
for bit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .predictive import CUTOFF_CM, spell_lengths

logger = logging.getLogger(__name__)

METRICS = ("mean_dsl", "intensity", "wet_spell_count", "mean_wet_spell_precip", "max_kday_precip")
DEFAULT_PERIODS = ((1920, 2021), (1950, 2021), (1980, 2021))


def compute_metric(values, metric: str, cutoff: float = CUTOFF_CM, k: int = 40) -> float:
    """One season's metric from a fully observed (or completed) day sequence.

    Dry days are below ``cutoff``; wet days are at or above it. Returns NaN
    when the metric is undefined (no wet days for intensity or wet-spell
    precipitation, no dry days for ``mean_dsl``, season shorter than ``k``).
    """
    v = np.asarray(values, dtype=float)
    if np.isnan(v).any():
        raise ValueError("metric needs a complete season; impute missing days first")
    if metric == "mean_dsl":
        L = spell_lengths(v, cutoff)
        return float(np.mean(L)) if L else math.nan
    if metric == "intensity":
        wet = v[v >= cutoff]
        return float(wet.mean()) if wet.size else math.nan
    if metric == "wet_spell_count":
        return float(len(spell_lengths(v, cutoff, wet=True)))
    if metric == "mean_wet_spell_precip":
        wet = v >= cutoff
        starts = np.flatnonzero(wet & ~np.concatenate([[False], wet[:-1]]))
        if starts.size == 0:
            return math.nan
        # each segment runs to the next spell start; its dry days add zero
        return float(np.add.reduceat(np.where(wet, v, 0.0), starts).mean())
    if metric == "max_kday_precip":
        if v.size < k:
            return math.nan
        return float(np.lib.stride_tricks.sliding_window_view(v, k).sum(axis=1).max())
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def metric_label(metric: str, k: int = 40) -> str:
    return f"max_{k}day_precip" if metric == "max_kday_precip" else metric


def metric_by_year(values: np.ndarray, day_count: np.ndarray, metric: str, cutoff: float = CUTOFF_CM,
                   k: int = 40) -> np.ndarray:
    """Metric for each row of a ``(T, S)`` array; NaN for years with missing days."""
    out = np.full(values.shape[0], np.nan)
    for t in range(values.shape[0]):
        row = values[t, : day_count[t]]
        if not np.isnan(row).any():
            out[t] = compute_metric(row, metric, cutoff, k)
    return out


@dataclass
class MetricSeries:
    metric: str
    years: np.ndarray
    values: np.ndarray
    source: str = "observed"

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.years.shape != self.values.shape:
            raise ValueError("one value per year required")

    def period(self, first: int, last: int) -> "MetricSeries":
        sel = (self.years >= first) & (self.years <= last)
        return MetricSeries(self.metric, self.years[sel], self.values[sel], self.source)

    def defined(self) -> tuple[np.ndarray, np.ndarray]:
        ok = np.isfinite(self.values)
        return self.years[ok], self.values[ok]


def _xy(series, years=None):
    if isinstance(series, MetricSeries):
        return series.defined()
    v = np.asarray(series, dtype=float)
    y = np.arange(v.size, dtype=float) if years is None else np.asarray(years, dtype=float)
    ok = np.isfinite(v)
    return y[ok], v[ok]


def sens_slope(series, years=None) -> float:
    """Median pairwise slope, per decade. Undefined years are skipped."""
    y, v = _xy(series, years)
    if v.size < 2:
        raise ValueError("Sen's slope needs at least 2 defined years")
    i, j = np.triu_indices(v.size, k=1)
    slopes = (v[j] - v[i]) / (y[j] - y[i])
    return float(np.median(slopes)) * 10.0


@dataclass(frozen=True)
class MannKendall:
    S: int
    var_S: float
    z: float
    p: float
    n: int
    var_exact: Fraction | None = None


def _mk_variance(v: np.ndarray) -> Fraction:
    n = v.size
    _, counts = np.unique(v, return_counts=True)
    ties = sum(int(t) * (int(t) - 1) * (2 * int(t) + 5) for t in counts if t > 1)
    return Fraction(n * (n - 1) * (2 * n + 5) - ties, 18)


def _continuity(S) -> Fraction:
    S = Fraction(S)
    return S - (S > 0) + (S < 0)


def _z_p(Sc: Fraction, var: Fraction) -> tuple[float, float]:
    if var <= 0 or Sc == 0:
        return 0.0, 1.0
    z = float(Sc) / math.sqrt(float(var))
    return z, float(2.0 * norm.sf(abs(z)))


def mann_kendall(series, years=None) -> MannKendall:
    """Two-sided Mann-Kendall test with tie-corrected variance and continuity correction."""
    _, v = _xy(series, years)
    n = v.size
    if n < 4:
        raise ValueError("Mann-Kendall needs at least 4 defined years")
    i, j = np.triu_indices(n, k=1)
    S = int(np.sign(v[j] - v[i]).sum())
    var = _mk_variance(v)
    z, p = _z_p(_continuity(S), var)
    return MannKendall(S, float(var), z, p, n, var)


@dataclass(frozen=True)
class TrendResult:
    metric: str
    period: tuple[int, int]
    method: str  # imputation_MI | bayes_posterior | observed
    sen_slope: float
    S: float
    var_S: float
    z: float
    p: float
    n_years: int
    n_imputations: int = 1


def rubin_combine(tests: list, slopes: list[float] | None = None, metric: str = "",
                  period: tuple[int, int] = (0, 0), n_years: int = 0) -> TrendResult:
    """Combine per-imputation tests by Rubin's rules.

    ``tests`` holds :class:`MannKendall` results or ``(S, var_S)`` pairs.

    Each S is continuity-corrected first; the between-imputation variance
    is that of the corrected statistics.
    """
    M = len(tests)
    if M == 0:
        raise ValueError("need at least one imputation")
    pairs = [(t.S, t.var_exact if t.var_exact is not None else t.var_S) if isinstance(t, MannKendall) else t
             for t in tests]
    Sc = [_continuity(S) for S, _ in pairs]
    W = [Fraction(v) for _, v in pairs]
    mean_S = sum(Sc, Fraction(0)) / M
    within = sum(W, Fraction(0)) / M
    between = sum(((s - mean_S) ** 2 for s in Sc), Fraction(0)) / (M - 1) if M > 1 else Fraction(0)
    total = within + (1 + Fraction(1, M)) * between
    z, p = _z_p(mean_S, total)
    slope = float(np.mean(slopes)) if slopes else math.nan
    return TrendResult(metric, tuple(period), "imputation_MI", slope, float(mean_S), float(total), z, p, n_years, M)


@dataclass
class SlopeSummary:
    metric: str
    period: tuple[int, int]
    slopes: np.ndarray  # one per simulation, per decade
    quantiles: dict

    @property
    def prob_positive(self) -> float:
        return float(np.mean(self.slopes > 0))

    @property
    def prob_zero(self) -> float:
        return float(np.mean(self.slopes == 0))


SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def posterior_slope_summary(ensemble: np.ndarray, years, period: tuple[int, int], metric: str = "",
                            quantiles=SUMMARY_QUANTILES) -> SlopeSummary:
    """Sen's slope of each simulated metric series over ``period``.

    ``ensemble`` is ``(n_sims, n_years)``.
    """
    years = np.asarray(years, dtype=float)
    ens = np.atleast_2d(np.asarray(ensemble, dtype=float))
    sel = (years >= period[0]) & (years <= period[1])
    if sel.sum() < 2:
        raise ValueError(f"period {period} covers fewer than 2 years")
    slopes = np.array([sens_slope(row[sel], years[sel]) for row in ens])
    return SlopeSummary(metric, tuple(period), slopes, {q: float(np.quantile(slopes, q)) for q in quantiles})


def effective_period(years, period: tuple[int, int]) -> tuple[int, int] | None:
    """The part of ``period`` covered by ``years``, or None if empty."""
    y = [yr for yr in years if period[0] <= yr <= period[1]]
    return (min(y), max(y)) if y else None


RESULT_HEADER = ("station", "season", "metric", "period", "years_used", "method", "sen_slope_per_decade", "S", "var_S",
                 "z", "p_value", "q05", "q25", "q50", "q75", "q95", "prob_positive", "n")


def _g(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and not math.isfinite(x)) else f"{x:.6g}"


def write_results(path: str | Path, station: str, season: str, mi: list[tuple[TrendResult, tuple]],
                  bayes: list[tuple[SlopeSummary, tuple]]) -> None:
    """One row per metric x period x method; entries pair a result with the years it used."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r, used in mi:
            w.writerow([station, season, r.metric, f"{r.period[0]}-{r.period[1]}", f"{used[0]}-{used[1]}", r.method,
                        _g(r.sen_slope), _g(r.S), _g(r.var_S), _g(r.z), _g(r.p), "NA", "NA", "NA", "NA", "NA", "NA",
                        r.n_imputations])
        for s, used in bayes:
            q = [s.quantiles.get(k) for k in SUMMARY_QUANTILES]
            w.writerow([station, season, s.metric, f"{s.period[0]}-{s.period[1]}", f"{used[0]}-{used[1]}",
                        "bayes_posterior", _g(float(np.median(s.slopes))), "NA", "NA", "NA", "NA",
                        *[_g(x) for x in q], _g(s.prob_positive), s.slopes.size])
