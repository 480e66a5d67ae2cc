"""Held-out-year predictive scores and year-grouped WAIC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .ghcn import DailySeries
from .inference import LikelihoodEvaluator, PosteriorSamples, filter_all
from .model import STATE_EMISSION, HmmModel, HmmParams


@dataclass
class HoldoutPlan:
    held_years: list[int] = field(default_factory=lambda: list(range(1910, 2021, 10)))

    @classmethod
    def every_tenth(cls, first: int = 1910, last: int = 2020) -> "HoldoutPlan":
        return cls(list(range(first, last + 1, 10)))

    def resolve(self, data: DailySeries) -> list[int]:
        """Held years present in the data; raises if none are."""
        held = sorted(set(self.held_years) & set(data.years))
        if self.held_years and not held:
            raise ValueError(f"none of the held years {self.held_years} are in the data")
        return held

    def train(self, data: DailySeries) -> DailySeries:
        return data.with_years_missing(self.resolve(data))

    def held_mask(self, data: DailySeries) -> np.ndarray:
        held = set(self.resolve(data))
        return np.array([y in held for y in data.years])


@dataclass
class ScoreSummary:
    mean: float
    sd: float
    n_impossible: int = 0
    per_sample: np.ndarray | None = None


def _summarize(per_sample: list[float], impossible: int) -> ScoreSummary:
    x = np.asarray(per_sample, dtype=float)
    if x.size == 0:
        return ScoreSummary(0.0, 0.0, impossible, x)
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return ScoreSummary(float(x.mean()), sd, impossible, x)


def day_logpred_one_day(params: HmmParams, data: DailySeries, evaluator: LikelihoodEvaluator | None = None) -> np.ndarray:
    """``log p(r_s | r_1..r_{s-1})`` within each year, ``(T, S)``; 0 on missing days."""
    ev = evaluator or LikelihoodEvaluator(params.model, data, cache=False)
    theta = params.values
    _, _, log_norm = filter_all(ev.transition_matrices(theta), ev.emission_logprobs(theta), params.initial,
                                data.day_count)
    return np.where(data.observed, log_norm, 0.0)


def day_logpred_marginal(params: HmmParams, data: DailySeries, evaluator: LikelihoodEvaluator | None = None) -> np.ndarray:
    """``log p(r_s)`` with no conditioning on the same year's values, ``(T, S)``."""
    ev = evaluator or LikelihoodEvaluator(params.model, data, cache=False)
    theta = params.values
    P = ev.transition_matrices(theta)
    logem = ev.emission_logprobs(theta)
    T, S = P.shape[:2]
    state = np.broadcast_to(params.initial, (T, 5)).copy()
    out = np.zeros((T, S))
    em = np.moveaxis(logem[STATE_EMISSION], 0, -1)
    with np.errstate(divide="ignore"):
        for s in range(S):
            if s > 0:
                state = np.einsum("ti,tij->tj", state, P[:, s])
            out[:, s] = logsumexp(em[:, s] + np.log(state), axis=1)
    return np.where(data.observed, out, 0.0)


def _heldout_nll(samples, model, data, plan, scorer) -> ScoreSummary:
    held = plan.held_mask(data)
    if not held.any():
        return ScoreSummary(0.0, 0.0, 0, np.zeros(0))
    ev = LikelihoodEvaluator(model, data)
    scores, impossible = [], 0
    for params in samples.iter_params(model):
        lp = scorer(params, data, ev)[held]
        bad = np.isneginf(lp)
        impossible += int(bad.sum())
        scores.append(float(-lp[~bad].sum()))
    return _summarize(scores, impossible)


def one_day_ahead_nll(samples: PosteriorSamples, model: HmmModel, data: DailySeries, plan: HoldoutPlan) -> ScoreSummary:
    """Held-out NLL where each held day conditions on all earlier days of its year.

    Returns the posterior mean and sd of the summed NLL. Observations with
    zero probability are counted in ``n_impossible`` and left out of the sum.
    """
    return _heldout_nll(samples, model, data, plan, day_logpred_one_day)


def full_year_nll(samples: PosteriorSamples, model: HmmModel, data: DailySeries, plan: HoldoutPlan) -> ScoreSummary:
    """Held-out NLL where each held day is predicted from the training data only."""
    return _heldout_nll(samples, model, data, plan, day_logpred_marginal)


def waic_yearly(year_loglik: np.ndarray) -> tuple[float, float]:
    """WAIC with each year as one observation; ``year_loglik`` is ``(n_samples, T)``."""
    ll = np.asarray(year_loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 1:
        raise ValueError("year_loglik must be (n_samples, n_years)")
    n = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(n)))
    p_waic = float(np.sum(ll.var(axis=0, ddof=1))) if n > 1 else 0.0
    return -2.0 * (lppd - p_waic), p_waic


@dataclass
class EvalReport:
    label: str
    one_day: ScoreSummary
    full_year: ScoreSummary
    waic: float
    p_waic: float


TABLE2_HEADER = ("station", "season", "model", "nll_one_day", "nll_one_day_sd", "nll_full_year", "nll_full_year_sd",
                 "waic", "p_waic", "n_impossible")


def write_table2(reports: list[EvalReport], path: str | Path, station: str = "", season: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE2_HEADER)
        for r in reports:
            w.writerow([station, season, r.label, f"{r.one_day.mean:.3f}", f"{r.one_day.sd:.3f}",
                        f"{r.full_year.mean:.3f}", f"{r.full_year.sd:.3f}", f"{r.waic:.3f}", f"{r.p_waic:.3f}",
                        r.one_day.n_impossible + r.full_year.n_impossible])
