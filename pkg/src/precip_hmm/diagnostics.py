"""Rank-normalized split R-hat and effective sample size.

Draws for one scalar quantity are arranged ``(n_draws, n_chains)``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

logger = logging.getLogger(__name__)


class DegenerateDrawsWarning(UserWarning):
    pass


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("draws must be (n_draws, n_chains)")
    if x.shape[0] < 4:
        raise ValueError("need at least 4 draws per chain")
    if not np.all(np.isfinite(x)):
        raise ValueError("draws must be finite")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[0] // 2
    return np.concatenate([x[:n], x[x.shape[0] - n:]], axis=1)


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Joint ranks over all draws mapped through the normal quantile (offset 3/8)."""
    r = rankdata(x, method="average").reshape(x.shape)
    return norm.ppf((r - 0.375) / (x.size + 0.25))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x.flat[0]))


def _rhat_plain(x: np.ndarray) -> float:
    n = x.shape[0]
    means = x.mean(axis=0)
    B = n * means.var(ddof=1)
    W = x.var(axis=0, ddof=1).mean()
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def rhat(draws) -> float:
    """Max of bulk and folded rank-normalized split R-hat."""
    x = _as_chains(draws)
    if x.shape[1] < 2 and x.shape[0] < 4:
        raise ValueError("need two chains or enough draws to split")
    if _is_constant(x):
        warnings.warn("constant draws; R-hat set to 1", DegenerateDrawsWarning, stacklevel=2)
        return 1.0
    s = _split(x)
    bulk = _rhat_plain(rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = 1.0 if _is_constant(folded) else _rhat_plain(rank_normalize(folded))
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance per column by FFT, biased (divide by n)."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=m, axis=0)
    return np.fft.irfft(f * np.conj(f), n=m, axis=0)[:n] / n


def _ess_raw(x: np.ndarray) -> float:
    """ESS of ``(n, m)`` chains with Geyer's initial monotone sequence."""
    n, m = x.shape
    acov = _autocov(x)
    chain_var = acov[0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=0).var(ddof=1)
    if var_plus <= 0:
        return float(n * m)
    rho = 1.0 - (mean_var - acov.mean(axis=1)) / var_plus
    rho[0] = 1.0
    # sum adjacent pairs while positive, forcing them non-increasing
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        p = min(p, prev)
        total += p
        prev = p
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(n * m))
    return float(n * m / tau)


def ess(draws, kind: str = "bulk") -> float:
    """Bulk ESS on rank-normalized split chains, or tail ESS.

    Tail ESS is the smaller ESS of the indicators for falling at or below
    the 5% and 95% quantiles.
    """
    x = _as_chains(draws)
    if _is_constant(x):
        warnings.warn("constant draws; ESS set to the draw count", DegenerateDrawsWarning, stacklevel=2)
        return float(x.size)
    s = _split(x)
    if kind == "bulk":
        return _ess_raw(rank_normalize(s))
    if kind == "tail":
        out = []
        for q in (0.05, 0.95):
            ind = (s <= np.quantile(s, q)).astype(float)
            out.append(float(s.size) if _is_constant(ind) else _ess_raw(ind))
        return min(out)
    raise ValueError(f"kind must be 'bulk' or 'tail', got {kind!r}")


def summarize_percentiles(values, percentiles=(50, 99)) -> dict[float, float]:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no finite values to summarize")
    return {p: float(np.percentile(v, p)) for p in percentiles}


def group_rhats(per_sim: np.ndarray, n_chains: int) -> np.ndarray:
    """R-hat for each group of a ``(n_chains * n_per_chain, G)`` quantity.

    Rows must be chain-major. Groups with any undefined value (for example
    a year where some simulation had no wet day) are skipped as NaN.
    """
    per_sim = np.asarray(per_sim, dtype=float)
    n = per_sim.shape[0] // n_chains
    x = per_sim[: n * n_chains].reshape(n_chains, n, -1)
    out = np.full(x.shape[2], np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDrawsWarning)
        for g in range(x.shape[2]):
            col = x[:, :, g].T
            if np.all(np.isfinite(col)):
                out[g] = rhat(col)
    return out


TABLE_A1_COLUMNS = (
    ("prob_exceed_0.3_by_year", "yearly_prob_gt_0.3cm"),
    ("prob_exceed_1_by_year", "yearly_prob_gt_1cm"),
    ("prob_exceed_2_by_year", "yearly_prob_gt_2cm"),
    ("prob_exceed_0.3_by_day", "daily_prob_gt_0.3cm"),
    ("prob_exceed_1_by_day", "daily_prob_gt_1cm"),
    ("prob_exceed_2_by_day", "daily_prob_gt_2cm"),
    ("dry_to_dry_by_year", "yearly_dry_to_dry"),
    ("wet_to_dry_by_year", "yearly_wet_to_dry"),
    ("mean_dsl_by_year", "yearly_mean_dsl"),
    ("intensity_by_year", "yearly_intensity"),
)


def _f(x: float, digits: int = 3) -> str:
    return "NA" if not np.isfinite(x) else f"{x:.{digits}f}"


def table_a1_row(per_sim: dict[str, np.ndarray], n_chains: int, percentiles=(50, 99)) -> dict[str, str]:
    """Median (99th percentile) R-hat across groups for each quantity."""
    row = {}
    for key, col in TABLE_A1_COLUMNS:
        r = group_rhats(per_sim[key], n_chains)
        r = r[np.isfinite(r)]
        if r.size == 0:
            row[col] = "NA"
            continue
        q = summarize_percentiles(r, percentiles)
        row[col] = f"{_f(q[percentiles[0]])} ({_f(q[percentiles[1]])})"
    return row


def slope_diagnostics(slopes: np.ndarray, n_chains: int) -> dict[str, float]:
    """R-hat, bulk and tail ESS of a chain-major vector of per-simulation slopes."""
    s = np.asarray(slopes, dtype=float)
    n = s.size // n_chains
    x = s[: n * n_chains].reshape(n_chains, n).T
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDrawsWarning)
        return {"rhat": rhat(x), "ess_bulk": ess(x, "bulk"), "ess_tail": ess(x, "tail")}


def write_table(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
