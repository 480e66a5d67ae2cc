"""Posterior-predictive simulation and assessment summaries.

Every summary works on a ``(T, S)`` array in cm where NaN marks a day that
is missing or outside the season. Simulations are masked to the observed
missingness before summarizing so both sides see the same days.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ghcn import DailySeries
from .model import HmmParams, sample_emission

CUTOFF_CM = 0.3
EXCEED_THRESHOLDS = (0.3, 1.0, 2.0)
BINS = ("dry", "moist", "wet")
BIN_EDGES = (0.3, 1.0)
KDAY = (3, 10)
OMIT_FRACTION = 0.25


@dataclass
class SimulatedSeries:
    values: np.ndarray  # (T, S), NaN outside the season or where masked
    day_count: np.ndarray
    masked: bool = False
    states: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape


def simulate_states(P: np.ndarray, init: np.ndarray, day_count: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Markov chain paths (0-based) over ``(T, S)``, -1 outside the season."""
    T, S = P.shape[:2]
    u = rng.random((T, S))
    states = np.empty((T, S), dtype=np.int64)
    cum0 = np.cumsum(init)
    states[:, 0] = np.minimum(np.searchsorted(cum0, u[:, 0] * cum0[-1], side="right"), 4)
    rows = np.arange(T)
    for s in range(1, S):
        cum = np.cumsum(P[rows, s, states[:, s - 1]], axis=1)
        states[:, s] = np.minimum((u[:, s, None] * cum[:, -1:] >= cum).sum(axis=1), 4)
    states[np.arange(S)[None, :] >= day_count[:, None]] = -1
    return states


def simulate_series(params: HmmParams, like: DailySeries, rng: np.random.Generator,
                    evaluator=None) -> SimulatedSeries:
    """One full simulated record on the grid of ``like`` (all days, no mask)."""
    if evaluator is not None:
        P = evaluator.transition_matrices(params.values)
        shape, scale = evaluator.emission_grids(params.values)
    else:
        P = params.transition_matrices()
        shape, scale = params.emission_grids()
    states = simulate_states(P, params.initial, like.day_count, rng)
    vals = sample_emission(np.maximum(states, 0), params.pi, shape, scale, params.model.family, rng)
    vals = np.where(states >= 0, vals, np.nan)
    return SimulatedSeries(vals, like.day_count.copy(), False, states)


def apply_mask(sim: SimulatedSeries, data: DailySeries) -> SimulatedSeries:
    if sim.values.shape != data.values.shape:
        raise ValueError(f"simulation shape {sim.values.shape} does not match data {data.values.shape}")
    return SimulatedSeries(np.where(data.missing, np.nan, sim.values), sim.day_count, True, sim.states)


# ---------------------------------------------------------------------------
# per-group statistics on a (T, S) array

def _nanmean(x: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    n = w.sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, np.where(w, x, 0.0).sum(axis=axis) / np.maximum(n, 1), np.nan)


def seasonal_total(v: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(v).all(axis=1), np.nan, np.nansum(v, axis=1))


def prob_exceed(v: np.ndarray, c: float, by: str = "year") -> np.ndarray:
    obs = ~np.isnan(v)
    return _nanmean((np.nan_to_num(v) > c).astype(float), obs, 1 if by == "year" else 0)


def intensity(v: np.ndarray, cutoff: float = CUTOFF_CM, by: str = "year") -> np.ndarray:
    """Mean amount over days above ``cutoff``; NaN where there are none."""
    wet = np.nan_to_num(v) > cutoff
    return _nanmean(np.nan_to_num(v), wet, 1 if by == "year" else 0)


def discretize(v: np.ndarray) -> np.ndarray:
    """0 dry (<= 0.3 cm), 1 moist (0.3-1], 2 wet (> 1); -1 missing."""
    out = np.digitize(np.nan_to_num(v), BIN_EDGES, right=True)
    return np.where(np.isnan(v), -1, out)


def cond_transition(v: np.ndarray, by: str = "year") -> np.ndarray:
    """P(today's bin | yesterday's bin) per group, shape ``(3, 3, G)``.

    Only consecutive pairs with both days observed count; groups by the
    day of the second day of the pair. Day 0 of the season has no pair.
    """
    b = discretize(v)
    prev, cur = b[:, :-1], b[:, 1:]
    ok = (prev >= 0) & (cur >= 0)
    axis = 1 if by == "year" else 0
    out = []
    for i in range(3):
        from_i = ok & (prev == i)
        n = from_i.sum(axis=axis)
        rows = []
        for j in range(3):
            k = (from_i & (cur == j)).sum(axis=axis)
            with np.errstate(invalid="ignore", divide="ignore"):
                rows.append(np.where(n > 0, k / np.maximum(n, 1), np.nan))
        out.append(rows)
    res = np.array(out)
    if by == "day":
        res = np.concatenate([np.full((3, 3, 1), np.nan), res], axis=2)
    return res


def dry_wet_transition(v: np.ndarray, cutoff: float = CUTOFF_CM, by: str = "year") -> dict[str, np.ndarray]:
    """``dry_to_dry`` and ``wet_to_dry`` frequencies with a single cutoff."""
    wet = np.where(np.isnan(v), -1, (np.nan_to_num(v) > cutoff).astype(int))
    prev, cur = wet[:, :-1], wet[:, 1:]
    ok = (prev >= 0) & (cur >= 0)
    axis = 1 if by == "year" else 0
    out = {}
    for name, p in (("dry_to_dry", 0), ("wet_to_dry", 1)):
        sel = ok & (prev == p)
        out[name] = _nanmean((cur == 0).astype(float), sel, axis)
    return out


def kday_sums(v: np.ndarray, k: int) -> np.ndarray:
    """All overlapping within-season k-day sums, skipping windows with missing days."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for row in v:
        if row.size < k:
            continue
        w = np.lib.stride_tricks.sliding_window_view(row, k).sum(axis=1)
        out.append(w[~np.isnan(w)])
    return np.concatenate(out) if out else np.empty(0)


def spell_lengths(row: np.ndarray, cutoff: float = CUTOFF_CM, wet: bool = False) -> list[int]:
    """Maximal runs of dry (< cutoff) or wet (>= cutoff) days.

    Missing days end a run; runs cut by the season edges or by missing
    days still count at their observed length.
    """
    row = np.asarray(row, dtype=float)
    with np.errstate(invalid="ignore"):
        hit = (row >= cutoff) if wet else (row < cutoff)
    d = np.diff(np.concatenate([[0], hit.astype(np.int8), [0]]))
    return (np.flatnonzero(d == -1) - np.flatnonzero(d == 1)).tolist()


def mean_dsl(v: np.ndarray, cutoff: float = CUTOFF_CM) -> np.ndarray:
    out = np.full(v.shape[0], np.nan)
    for t, row in enumerate(v):
        L = spell_lengths(row, cutoff)
        if L:
            out[t] = float(np.mean(L))
    return out


def dsl_lengths(v: np.ndarray, cutoff: float = CUTOFF_CM) -> np.ndarray:
    return np.array([n for row in v for n in spell_lengths(row, cutoff)], dtype=float)


def plotting_positions(n: int, max_points: int | None = None) -> np.ndarray:
    if n == 0:
        return np.empty(0)
    if n == 1:
        return np.array([0.5])
    p = np.arange(n) / (n - 1)
    if max_points is not None and n > max_points:
        p = p[np.unique(np.round(np.linspace(0, n - 1, max_points)).astype(int))]
    return p


# ---------------------------------------------------------------------------
# assessment over an ensemble

@dataclass
class SummaryStat:
    """One summary across groups: observed values and per-simulation values."""

    name: str
    by: str  # year | day_of_season | quantile
    groups: np.ndarray
    observed: np.ndarray
    sims: np.ndarray  # (M, G)
    omitted: np.ndarray
    level: float = 0.90

    def band(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Mean, median, lower and upper band over simulations (NaN-aware)."""
        a = (1 - self.level) / 2
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return (np.nanmean(self.sims, axis=0), np.nanmedian(self.sims, axis=0),
                    np.nanquantile(self.sims, a, axis=0), np.nanquantile(self.sims, 1 - a, axis=0))

    def rows(self):
        mean, med, lo, hi = self.band()
        for i, g in enumerate(self.groups):
            yield (self.name, self.by, g, self.observed[i], mean[i], med[i], lo[i], hi[i], bool(self.omitted[i]))


STAT_HEADER = ("stat", "by", "group", "observed", "sim_mean", "sim_median", "sim_lo", "sim_hi", "omitted")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "NA" if np.isnan(x) else f"{x:.6g}"


def write_stats(stats: list[SummaryStat], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAT_HEADER)
        for st in stats:
            for r in st.rows():
                w.writerow([r[0], r[1], _fmt(r[2])] + [_fmt(x) for x in r[3:]])


def read_stats(path: str | Path) -> dict[str, dict]:
    """Read a summary table back as ``{stat: {column: array}}``."""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = out.setdefault(row["stat"], {k: [] for k in STAT_HEADER[1:]})
            for k in STAT_HEADER[1:]:
                d[k].append(row[k])
    for d in out.values():
        d["by"] = d["by"][0]
        for k in STAT_HEADER[2:]:
            d[k] = np.array([np.nan if x == "NA" else float(x) for x in d[k]])
        d["omitted"] = d["omitted"].astype(bool)
    return out


def _per_series(v: np.ndarray, cutoff: float) -> dict[str, np.ndarray]:
    """All group-wise statistics of one series (observed or simulated)."""
    out = {"total_by_year": seasonal_total(v)}
    for c in EXCEED_THRESHOLDS:
        out[f"prob_exceed_{c:g}_by_year"] = prob_exceed(v, c, "year")
        out[f"prob_exceed_{c:g}_by_day"] = prob_exceed(v, c, "day")
    out["intensity_by_year"] = intensity(v, cutoff, "year")
    out["intensity_by_day"] = intensity(v, cutoff, "day")
    for by, tag in (("year", "year"), ("day", "day")):
        ct = cond_transition(v, by)
        for i, a in enumerate(BINS):
            for j, b in enumerate(BINS):
                out[f"trans_{a}_to_{b}_by_{tag}"] = ct[i, j]
    dw = dry_wet_transition(v, cutoff, "year")
    out["dry_to_dry_by_year"] = dw["dry_to_dry"]
    out["wet_to_dry_by_year"] = dw["wet_to_dry"]
    out["mean_dsl_by_year"] = mean_dsl(v, cutoff)
    return out


@dataclass
class Assessment:
    """Observed-vs-simulated summaries for one data set and ensemble."""

    stats: dict[str, SummaryStat] = field(default_factory=dict)
    qq: dict[str, SummaryStat] = field(default_factory=dict)
    # per-simulation quantities for convergence checks, each (M, G)
    per_sim: dict[str, np.ndarray] = field(default_factory=dict)


class AssessmentAccumulator:
    """Streams simulated series into per-simulation summaries."""

    def __init__(self, data: DailySeries, cutoff: float = CUTOFF_CM, omit_fraction: float = OMIT_FRACTION,
                 max_qq_points: int = 1000):
        self.data = data
        self.cutoff = cutoff
        self.omit_fraction = omit_fraction
        self.obs = _per_series(data.values, cutoff)
        self.obs_unmasked_dsl = self.obs["mean_dsl_by_year"]
        self.qq_obs = {"daily": np.sort(data.values[data.observed])}
        for k in KDAY:
            self.qq_obs[f"sum{k}"] = np.sort(kday_sums(data.values, k))
        self.qq_obs["dsl"] = np.sort(dsl_lengths(data.values, cutoff))
        self.qq_pos = {k: plotting_positions(v.size, max_qq_points) for k, v in self.qq_obs.items()}
        self._sims: dict[str, list] = {k: [] for k in self.obs}
        self._sims["mean_dsl_unmasked_by_year"] = []
        self._qq: dict[str, list] = {k: [] for k in self.qq_obs}

    def add(self, sim: SimulatedSeries) -> None:
        masked = apply_mask(sim, self.data).values
        for k, v in _per_series(masked, self.cutoff).items():
            self._sims[k].append(v)
        self._sims["mean_dsl_unmasked_by_year"].append(mean_dsl(sim.values, self.cutoff))
        samples = {"daily": masked[~np.isnan(masked)], "dsl": dsl_lengths(masked, self.cutoff)}
        for k in KDAY:
            samples[f"sum{k}"] = kday_sums(masked, k)
        for k, x in samples.items():
            p = self.qq_pos[k]
            self._qq[k].append(np.quantile(x, p) if x.size and p.size else np.full(p.size, np.nan))

    def finish(self) -> Assessment:
        d = self.data
        years = np.array(d.years)
        days = np.arange(1, d.max_days + 1)
        miss_year = d.missing_fraction_by_year() > self.omit_fraction
        miss_day = d.missing_fraction_by_day() > self.omit_fraction
        any_missing = (d.missing & d.in_season).any(axis=1)
        res = Assessment()
        for k, obs in self.obs.items():
            sims = np.array(self._sims[k])
            by_year = k.endswith("_by_year")
            omitted = (miss_year if by_year else miss_day) | np.isnan(obs)
            name = k.rsplit("_by_", 1)[0]
            if k == "mean_dsl_by_year":
                # observed DSL dropped for any missing day; simulations left unmasked
                sims = np.array(self._sims["mean_dsl_unmasked_by_year"])
                omitted = any_missing | np.isnan(obs)
            res.stats[k] = SummaryStat(name, "year" if by_year else "day_of_season", years if by_year else days,
                                       np.where(omitted, np.nan, obs), sims, omitted, 0.90)
            res.per_sim[k] = np.array(self._sims[k])
        for k, obs in self.qq_obs.items():
            p = self.qq_pos[k]
            o = np.quantile(obs, p) if obs.size else np.empty(0)
            res.qq[k] = SummaryStat(f"qq_{k}", "quantile", p, o, np.array(self._qq[k]).reshape(-1, p.size),
                                    np.zeros(p.size, dtype=bool), 0.95)
        return res


# Files written by the assessment step and the statistics each holds.
FIGURE_FILES = {
    "fig1_qq_precip": ("qq:daily", "qq:sum3", "qq:sum10"),
    "fig2_mean_dsl_by_year": ("mean_dsl_by_year",),
    "figA1_total_by_year": ("total_by_year",),
    "figA2_prob_precip_by_year": ("prob_exceed_0.3_by_year",),
    "figA3_prob_precip_by_day": ("prob_exceed_0.3_by_day",),
    "figA4_intensity_by_year": ("intensity_by_year",),
    "figA5_intensity_by_day": ("intensity_by_day",),
    "figA6_trans_from_dry_by_year": tuple(f"trans_dry_to_{b}_by_year" for b in BINS),
    "figA7_trans_from_moist_by_year": tuple(f"trans_moist_to_{b}_by_year" for b in BINS),
    "figA8_trans_from_wet_by_year": tuple(f"trans_wet_to_{b}_by_year" for b in BINS),
    "figA9_trans_from_dry_by_day": tuple(f"trans_dry_to_{b}_by_day" for b in BINS),
    "figA10_trans_from_moist_by_day": tuple(f"trans_moist_to_{b}_by_day" for b in BINS),
    "figA11_trans_from_wet_by_day": tuple(f"trans_wet_to_{b}_by_day" for b in BINS),
    "figA12_qq_dsl": ("qq:dsl",),
}


def write_assessment(res: Assessment, directory: str | Path) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for fname, keys in FIGURE_FILES.items():
        stats = [res.qq[k[3:]] if k.startswith("qq:") else res.stats[k] for k in keys]
        p = d / f"{fname}.csv"
        write_stats(stats, p)
        paths.append(p)
    extra = [res.stats[k] for k in res.stats if not any(k in keys for keys in FIGURE_FILES.values())]
    p = d / "other_summaries.csv"
    write_stats(extra, p)
    paths.append(p)
    return paths
