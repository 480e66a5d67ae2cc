"""Render figures from the tidy tables written by ``assess`` and ``trend``.

matplotlib is imported here only, and only when a figure is drawn, so the
rest of the package runs without it.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .predictive import FIGURE_FILES, read_stats

logger = logging.getLogger(__name__)

OBS_COLOR = "black"
SIM_COLOR = "tab:red"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"figure.dpi": 100, "font.size": 9, "axes.spines.top": False, "axes.spines.right": False})
    return plt


def _band_panel(ax, d: dict, title: str, ylabel: str) -> None:
    g = d["group"]
    keep = ~d["omitted"]
    ax.fill_between(g, d["sim_lo"], d["sim_hi"], color=SIM_COLOR, alpha=0.25, lw=0)
    ax.plot(g, d["sim_mean"], color=SIM_COLOR, lw=1)
    ax.plot(g[keep], d["observed"][keep], "o", color=OBS_COLOR, ms=2.5)
    ax.set_title(title)
    ax.set_xlabel("year" if d["by"] == "year" else "day of season")
    ax.set_ylabel(ylabel)


def _qq_panel(ax, d: dict, title: str) -> None:
    o = d["observed"]
    ax.vlines(o, d["sim_lo"], d["sim_hi"], color=SIM_COLOR, alpha=0.4, lw=1)
    ax.plot(o, d["sim_median"], "o", color=SIM_COLOR, ms=2)
    if o.size:
        lim = [0, np.nanmax([np.nanmax(o), np.nanmax(d["sim_hi"])])]
        ax.plot(lim, lim, color=OBS_COLOR, lw=0.8)
    ax.set_title(title)
    ax.set_xlabel("observed")
    ax.set_ylabel("simulated")


def plot_assessment(adir: Path, fdir: Path) -> list[Path]:
    plt = _pyplot()
    paths = []
    for fname in FIGURE_FILES:
        src = adir / f"{fname}.csv"
        if not src.exists():
            continue
        stats = read_stats(src)
        fig, axes = plt.subplots(1, len(stats), figsize=(3.6 * len(stats), 3.0), squeeze=False)
        for ax, (name, d) in zip(axes[0], stats.items()):
            if d["by"] == "quantile":
                _qq_panel(ax, d, name.removeprefix("qq_"))
            else:
                _band_panel(ax, d, name, name)
        fig.tight_layout()
        out = fdir / f"{fname}.png"
        fig.savefig(out)
        plt.close(fig)
        paths.append(out)
    return paths


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(x: str) -> float:
    return np.nan if x in ("", "NA") else float(x)


def plot_trend(tdir: Path, fdir: Path) -> list[Path]:
    plt = _pyplot()
    paths = []
    rows = _read_csv(tdir / "fig3_metrics_by_year.csv") if (tdir / "fig3_metrics_by_year.csv").exists() else []
    metrics = list(dict.fromkeys(r["metric"] for r in rows))
    if metrics:
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.8 * len(metrics), 3.0), squeeze=False)
        for ax, m in zip(axes[0], metrics):
            sel = [r for r in rows if r["metric"] == m]
            y = np.array([int(r["year"]) for r in sel])
            ax.plot(y, [_num(r["imputed_mean"]) for r in sel], "o-", color=OBS_COLOR, ms=2.5, lw=0.8)
            ax.plot(y, [_num(r["imputed_q05"]) for r in sel], "--", color=OBS_COLOR, lw=0.6)
            ax.plot(y, [_num(r["imputed_q95"]) for r in sel], "--", color=OBS_COLOR, lw=0.6)
            ax.set_title(m)
            ax.set_xlabel("year")
        fig.tight_layout()
        out = fdir / "fig3_metrics_by_year.png"
        fig.savefig(out)
        plt.close(fig)
        paths.append(out)

    res_path, samp_path = tdir / "fig4_sen_slope_results.csv", tdir / "fig5_posterior_slope_samples.csv"
    if res_path.exists() and samp_path.exists():
        results = _read_csv(res_path)
        samples = _read_csv(samp_path)
        metrics = list(dict.fromkeys(r["metric"] for r in results))
        periods = list(dict.fromkeys(r["period"] for r in results))
        fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(3.8 * max(len(metrics), 1), 3.2), squeeze=False)
        for ax, m in zip(axes[0], metrics):
            data = [[_num(s["sen_slope_per_decade"]) for s in samples if s["metric"] == m and s["period"] == p]
                    for p in periods]
            pos = np.arange(1, len(periods) + 1)
            nonempty = [(x, d) for x, d in zip(pos, data) if len(d) > 1 and np.ptp(d) > 0]
            if nonempty:
                ax.violinplot([d for _, d in nonempty], positions=[x for x, _ in nonempty], showmedians=True)
            for x, p in zip(pos, periods):
                mi = [r for r in results if r["metric"] == m and r["period"] == p and r["method"] == "imputation_MI"]
                if mi:
                    pv = _num(mi[0]["p_value"])
                    filled = np.isfinite(pv) and pv < 0.05
                    ax.plot(x, _num(mi[0]["sen_slope_per_decade"]), "o", color=SIM_COLOR,
                            mfc=SIM_COLOR if filled else "white", ms=5)
                    ax.annotate(f"p={pv:.2f}", (x, 0), textcoords="offset points", xytext=(0, -12),
                                ha="center", fontsize=7)
            ax.axhline(0, color="grey", lw=0.6)
            ax.set_xticks(pos)
            ax.set_xticklabels(periods, rotation=20)
            ax.set_title(f"{m} (per decade)")
        fig.tight_layout()
        out = fdir / "fig4_sen_slopes.png"
        fig.savefig(out)
        plt.close(fig)
        paths.append(out)
    return paths


def render_all(output: str | Path) -> list[Path]:
    """Draw every figure whose table exists under ``output``."""
    out = Path(output)
    fdir = out / "figures"
    fdir.mkdir(parents=True, exist_ok=True)
    paths = []
    if (out / "assessment").is_dir():
        paths += plot_assessment(out / "assessment", fdir)
    if (out / "trend").is_dir():
        paths += plot_trend(out / "trend", fdir)
    logger.info("wrote %d figure(s) to %s", len(paths), fdir)
    return paths
