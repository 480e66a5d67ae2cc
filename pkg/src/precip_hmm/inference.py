"""Likelihood, adaptive Metropolis fitting and FFBS imputation.

The marginal likelihood integrates the hidden states with the forward
algorithm; missing days simply contribute no emission term. Emission
log-probabilities are cached per emission law and only recomputed when
that law's parameters change, because the incomplete-gamma evaluations
dominate the cost of a likelihood call.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from . import _kernels
from .ghcn import DailySeries
from .model import (EMISSION_STATES, STATE_EMISSION, TRANSITION_VARS, HmmModel, HmmParams, ModelSpec, alr_inverse,
                    block_log_prior, cdf_sf, center, check_constraints, interval_mass, reading_cm,
                    sample_emission)
from .splines import SplineBasis

logger = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


class _LRU:
    def __init__(self, size: int = 2):
        self.size = size
        self.data: OrderedDict = OrderedDict()

    def get(self, key):
        if key in self.data:
            self.data.move_to_end(key)
            return self.data[key]
        return None

    def put(self, key, value):
        self.data[key] = value
        self.data.move_to_end(key)
        while len(self.data) > self.size:
            self.data.popitem(last=False)


def _curve_indices(curve) -> np.ndarray:
    idx = [curve.b0]
    for sl in (curve.season, curve.year):
        if sl is not None:
            idx.extend(range(sl.start, sl.stop))
    return np.asarray(idx)


class LikelihoodEvaluator:
    """Per-year forward log-likelihoods with component caches.

    With ``cache=False`` every call recomputes from scratch; results are
    identical either way.
    """

    def __init__(self, model: HmmModel, series: DailySeries, cache: bool = True):
        if (series.n_years, series.max_days) != (model.n_years, model.n_days):
            raise ValueError(f"series grid {series.n_years}x{series.max_days} does not match model "
                             f"{model.n_years}x{model.n_days}")
        self.model = model
        self.series = series
        self.cache = cache
        self.delta = model.spec.rounding_halfwidth
        self.day_count = series.day_count
        vals = series.values
        obs = series.observed
        flat = vals.ravel()
        self.zero_idx = np.flatnonzero(obs.ravel() & (np.nan_to_num(flat, nan=-1.0) == 0.0))
        self.pos_idx = np.flatnonzero(obs.ravel() & (np.nan_to_num(flat, nan=-1.0) > 0.0))
        self.pos_val = reading_cm(flat[self.pos_idx])
        self.pos_unique, self.pos_inverse = np.unique(self.pos_val, return_inverse=True)
        lay = model.layout
        self._var_idx = {v: _curve_indices(lay.curves[v]) for v in TRANSITION_VARS}
        self._trans_idx = np.unique(np.concatenate(list(self._var_idx.values())))
        self._emis_idx = []
        self._emis_const = []
        for k in EMISSION_STATES:
            cs, cc = lay.curves[f"shape{k}"], lay.curves[f"scale{k}"]
            self._emis_idx.append(np.concatenate([_curve_indices(cs), _curve_indices(cc)]))
            self._emis_const.append(cs.season is None and cs.year is None and cc.season is None and cc.year is None)
        self._caches = {name: _LRU({"logit": 20, "grid": 6, "emis": 6}.get(name, 2))
                        for name in ("logit", "probs", "P", "emis", "logem", "ll", "grid")}
        self.n_evaluations = 0

    # cached components -----------------------------------------------------

    def _cached(self, name: str, key, compute):
        if not self.cache:
            return compute()
        c = self._caches[name]
        val = c.get(key)
        if val is None:
            val = compute()
            c.put(key, val)
        return val

    def _prob_grid(self, theta, v):
        key = (v, theta[self._var_idx[v]].tobytes())
        curve = self.model.layout.curves[v]
        return self._cached("logit", key, lambda: expit(self.model.curve_grid(theta, curve)))

    def transition_probs(self, theta) -> np.ndarray:
        key = theta[self._trans_idx].tobytes()
        return self._cached("probs", key, lambda: np.stack([self._prob_grid(theta, v) for v in TRANSITION_VARS]))

    def transition_matrices(self, theta) -> np.ndarray:
        key = theta[self._trans_idx].tobytes()
        return self._cached("P", key, lambda: _kernels.assemble_transitions(self.transition_probs(theta)))

    def _emission_state_grids(self, theta, e):
        k = EMISSION_STATES[e]
        lay = self.model.layout
        key = (e, theta[self._emis_idx[e]].tobytes())

        def compute():
            a = self.model.curve_grid(theta, lay.curves[f"shape{k}"])
            b = np.exp(self.model.curve_grid(theta, lay.curves[f"scale{k}"]))
            if self.model.family == "gamma":
                a = np.exp(a)
            return a, b

        return self._cached("grid", key, compute)

    def emission_grids(self, theta) -> tuple[np.ndarray, np.ndarray]:
        grids = [self._emission_state_grids(theta, e) for e in range(3)]
        return np.stack([g[0] for g in grids]), np.stack([g[1] for g in grids])

    def _emission_parts(self, theta, e):
        """(F(delta) at zero days, log interval mass at positive days)."""
        key = (e, theta[self._emis_idx[e]].tobytes())

        def compute():
            fam = self.model.family
            a, b = self._emission_state_grids(theta, e)
            with np.errstate(divide="ignore"):
                if self._emis_const[e]:
                    a0, b0 = a.flat[0], b.flat[0]
                    Fd = np.full(self.zero_idx.size, cdf_sf(self.delta, fam, a0, b0)[0])
                    u = self.pos_unique
                    mass = interval_mass(np.maximum(u - self.delta, 0.0), u + self.delta, fam, a0, b0)
                    logmass = np.log(np.maximum(mass, 0.0))[self.pos_inverse]
                else:
                    Fd = cdf_sf(self.delta, fam, a.flat[self.zero_idx], b.flat[self.zero_idx])[0]
                    r = self.pos_val
                    mass = interval_mass(np.maximum(r - self.delta, 0.0), r + self.delta, fam,
                                         a.flat[self.pos_idx], b.flat[self.pos_idx])
                    logmass = np.log(np.maximum(mass, 0.0))
            return Fd, logmass

        return self._cached("emis", key, compute)

    def emission_logprobs(self, theta) -> np.ndarray:
        """``(3, T, S)`` emission log-probabilities; zero on missing days."""
        lay = self.model.layout
        key = theta[np.concatenate(self._emis_idx + [np.arange(lay.pi.start, lay.pi.stop)])].tobytes()

        def compute():
            if not np.all(np.isfinite(theta)):
                raise ValueError("non-finite emission parameters")
            T, S = self.model.n_years, self.model.n_days
            out = np.zeros((3, T * S))
            pi = expit(theta[lay.pi])
            with np.errstate(divide="ignore"):
                for e in range(3):
                    Fd, logmass = self._emission_parts(theta, e)
                    out[e, self.zero_idx] = np.log(pi[e] + (1.0 - pi[e]) * Fd)
                    out[e, self.pos_idx] = np.log1p(-pi[e]) + logmass
            return out.reshape(3, T, S)

        return self._cached("logem", key, compute)

    def year_logliks(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        lay = self.model.layout
        key = theta[np.concatenate([self._trans_idx, *self._emis_idx,
                                    np.arange(lay.pi.start, lay.pi.stop),
                                    np.arange(lay.init.start, lay.init.stop)])].tobytes()

        def compute():
            self.n_evaluations += 1
            return _kernels.forward_year_logliks(self.transition_matrices(theta), self.emission_logprobs(theta),
                                                 alr_inverse(theta[lay.init]), self.day_count)

        return self._cached("ll", key, compute)


def forward_loglik(params: HmmParams, series: DailySeries, t: int | None = None):
    """Forward-algorithm log-likelihood of year ``t`` (or all years as an array)."""
    ll = LikelihoodEvaluator(params.model, series, cache=False).year_logliks(params.values)
    if np.any(ll == -np.inf):
        logger.warning("impossible observations in %d year(s)", int(np.sum(ll == -np.inf)))
    return ll if t is None else float(ll[t])


def filter_all(P: np.ndarray, logem: np.ndarray, init: np.ndarray, day_count: np.ndarray):
    """Vectorized forward filter over years.

    Returns ``(filtered, predicted, log_norm)``: filtered and one-step
    predicted state probabilities ``(T, S, 5)`` and the per-day log
    predictive probability ``log p(r_s | r_1..r_{s-1})`` ``(T, S)``.
    """
    T, S = P.shape[0], P.shape[1]
    em = np.moveaxis(logem[STATE_EMISSION], 0, -1)  # (T, S, 5)
    filtered = np.zeros((T, S, 5))
    predicted = np.zeros((T, S, 5))
    log_norm = np.zeros((T, S))
    for s in range(S):
        active = s < day_count
        prior = np.broadcast_to(init, (T, 5)) if s == 0 else np.einsum("ti,tij->tj", filtered[:, s - 1], P[:, s])
        predicted[:, s] = prior
        m = em[:, s].max(axis=1)
        finite = np.isfinite(m)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = prior * np.exp(em[:, s] - np.where(finite, m, 0.0)[:, None])
            c = w.sum(axis=1)
            ok = finite & (c > 0)
            log_norm[:, s] = np.where(active, np.where(ok, np.log(np.where(ok, c, 1.0)) + np.where(finite, m, 0.0), -np.inf), 0.0)
            filtered[:, s] = np.where(ok[:, None], w / np.where(ok, c, 1.0)[:, None], prior)
    return filtered, predicted, log_norm


def backward_sample(filtered: np.ndarray, P: np.ndarray, day_count: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw state paths (0-based) from their joint smoothing distribution."""
    T, S = filtered.shape[:2]
    states = np.full((T, S), -1, dtype=np.int64)
    u = rng.random((T, S))
    rows = np.arange(T)
    for s in range(S - 1, -1, -1):
        last = day_count - 1 == s
        inner = s < day_count - 1
        w = filtered[:, s].copy()
        if s + 1 < S and inner.any():
            nxt = np.where(inner, states[:, s + 1], 0)
            w[inner] *= P[rows[inner], s + 1, :, nxt[inner]]
        take = last | inner
        if not take.any():
            continue
        cum = np.cumsum(w, axis=1)
        draw = (u[:, s, None] * cum[:, -1:] > cum).sum(axis=1)
        states[take, s] = np.minimum(draw[take], 4)
    return states


def ffbs_impute(params: HmmParams, series: DailySeries, rng: np.random.Generator,
                evaluator: LikelihoodEvaluator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample state paths given all observed data and fill missing days.

    Returns ``(states, completed)``: 0-based states ``(T, S)`` (-1 outside
    the season) and the series with every missing in-season day replaced
    by a draw from its sampled state's emission law.
    """
    ev = evaluator or LikelihoodEvaluator(params.model, series, cache=False)
    theta = params.values
    P = ev.transition_matrices(theta)
    filtered, _, log_norm = filter_all(P, ev.emission_logprobs(theta), params.initial, series.day_count)
    if np.any(np.isneginf(log_norm.sum(axis=1))):
        raise ValueError("forward pass infeasible: impossible observation under these parameters")
    states = backward_sample(filtered, P, series.day_count, rng)
    shape, scale = ev.emission_grids(theta)
    draws = sample_emission(np.maximum(states, 0), params.pi, shape, scale, params.model.family, rng)
    fill = series.missing & series.in_season
    completed = np.where(fill, draws, series.values)
    return states, completed


def ffbs_impute_year(params: HmmParams, series: DailySeries, t: int, rng: np.random.Generator):
    """Single-year form: ``(state path 1..5, {day index: imputed cm})``."""
    states, completed = ffbs_impute(params, series, rng)
    n = series.day_count[t]
    miss = np.flatnonzero(series.missing[t, :n])
    return states[t, :n] + 1, {int(s): float(completed[t, s]) for s in miss}


def log_posterior(params: HmmParams, series: DailySeries, evaluator: LikelihoodEvaluator | None = None) -> float:
    m = params.model
    ev = evaluator or LikelihoodEvaluator(m, series, cache=False)
    theta = params.values
    if check_constraints(params, series.max_observed(), ev.transition_probs(theta), ev.emission_grids(theta)):
        return -math.inf
    lp = sum(block_log_prior(theta, m, i) for i in range(len(m.layout.blocks)))
    if lp == -math.inf:
        return -math.inf
    return float(lp + ev.year_logliks(theta).sum())


# ---------------------------------------------------------------------------
# sampler

@dataclass
class ChainConfig:
    n_iterations: int = 20000
    burn_in: int = 5000
    thin: int = 10
    n_chains: int = 5
    seed: int = 1
    adaptation_interval: int = 200
    target_acceptance: float = 0.44
    initial_scale: float = 0.1
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thin < 1 or self.n_chains < 1 or self.adaptation_interval < 1:
            raise ValueError("thin, n_chains and adaptation_interval must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must be in (0, 1)")

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


def _empirical_transition(obs_row_pairs):
    a, b = obs_row_pairs
    n = a.size
    return (b.sum() + 1) / (n + 2) if n else 0.5


def auto_init(model: HmmModel, series: DailySeries, rng: np.random.Generator, max_attempts: int = 1000) -> HmmParams:
    """Moment-based feasible starting point, jittered until feasible."""
    obs = series.values[series.observed]
    wet = np.sort(obs[obs > 0])
    if wet.size < 4:
        wet = np.array([0.05, 0.2, 0.8, 2.0])
    med = np.median(wet)
    lo, hi = wet[wet <= med], wet[wet > med]
    if hi.size == 0:
        hi = lo * 2.0
    max_obs = series.max_observed()

    def moments(x):
        mu, var = x.mean(), x.var()
        return (mu * mu / var, var / mu) if var > 0 else (1.0, mu)

    c4, c5 = lo.mean(), hi.mean()
    c5 = min(c5, 0.95 * max_obs) if np.isfinite(max_obs) else c5
    c1 = 0.2 * c4
    if model.family == "gamma":
        a4, b4 = moments(lo)
        a5, b5 = moments(hi)
        # rescale to the chosen centres, keeping the moment shapes
        shape = [0.5, a4, a5]
        scale = [c1 / 0.5, c4 / a4, c5 / a5]
    else:
        xi = [0.0, 0.1, 0.1]
        shape = xi
        scale = [c1 / math.log(2), c4 * 0.1 / (2 ** 0.1 - 1), c5 * 0.1 / (2 ** 0.1 - 1)]

    v = series.values
    prev, cur = v[:, :-1], v[:, 1:]
    both = ~np.isnan(prev) & ~np.isnan(cur)
    dry_prev = both & (prev == 0)
    wet_prev = both & (prev > 0)
    p_dd = _empirical_transition((prev[dry_prev], cur[dry_prev] == 0))
    p_ww = _empirical_transition((prev[wet_prev], cur[wet_prev] > 0))
    f0 = float(np.mean(obs == 0)) if obs.size else 0.8
    pi1 = 0.95 if f0 < 0.95 else min(0.995, 0.5 * (1 + f0))
    clip = lambda p: float(np.clip(p, 0.05, 0.95))  # noqa: E731
    base = logit(clip(p_dd))
    trans = {"pD1": expit(base + 0.5), "pD2": expit(base), "pD3": expit(base - 0.5), "pDW1": 0.5,
             "pW1": clip(p_ww), "pW2": clip(p_ww), "pW12": 0.3, "pW21": 0.3, "pWD1": 0.6, "pWD2": 0.6}
    start = model.constant_params(trans, [pi1, 0.3, 0.05], shape, scale, [0.3, 0.2, 0.2, 0.15, 0.15])
    lay = model.layout
    jitter_idx = np.array([b.start for b in lay.blocks if b.kind in ("trans_b0", "emis_b0", "pi")])
    ev = LikelihoodEvaluator(model, series, cache=False)
    theta = start.values
    for attempt in range(max_attempts):
        cand = theta.copy()
        if attempt:
            cand[jitter_idx] += 0.2 * rng.standard_normal(jitter_idx.size)
        p = model.params(cand)
        if check_constraints(p, max_obs, ev.transition_probs(cand), ev.emission_grids(cand)):
            continue
        if np.isfinite(ev.year_logliks(cand).sum()):
            return p
    raise InitializationError(f"no feasible starting point after {max_attempts} attempts; supply an explicit init")


@dataclass
class ChainResult:
    draws: np.ndarray  # (n_saved, n_params)
    year_loglik: np.ndarray  # (n_saved, T)
    acceptance: np.ndarray  # (n_params,)
    scales: np.ndarray
    seconds: float = 0.0


def _fmt(x: float) -> str:
    return repr(float(x))


class ChainWriter:
    """Append-only per-chain tables plus a resumable checkpoint."""

    def __init__(self, directory: str | Path, chain: int, names: list[str], years: list[int]):
        self.dir = Path(directory)
        self.chain = chain
        self.names = names
        self.years = years
        self.draws_path = self.dir / f"chain_{chain + 1:02d}.csv"
        self.ll_path = self.dir / f"loglik_{chain + 1:02d}.csv"
        self.ckpt_path = self.dir / f"checkpoint_{chain + 1:02d}.json"

    def start(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.draws_path, "w") as fh:
            fh.write(",".join(self.names) + "\n")
        with open(self.ll_path, "w") as fh:
            fh.write(",".join(str(y) for y in self.years) + "\n")

    def append(self, draws, lls):
        with open(self.draws_path, "a") as fh:
            for row in draws:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        with open(self.ll_path, "a") as fh:
            for row in lls:
                fh.write(",".join(_fmt(x) for x in row) + "\n")

    def checkpoint(self, state: dict):
        tmp = self.ckpt_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state))
        os.replace(tmp, self.ckpt_path)

    def load_checkpoint(self) -> dict | None:
        if not self.ckpt_path.exists():
            return None
        state = json.loads(self.ckpt_path.read_text())
        n = state["n_saved"]
        for path in (self.draws_path, self.ll_path):
            lines = path.read_text().splitlines(keepends=True)
            path.write_text("".join(lines[: n + 1]))
        return state

    def finish(self, acceptance, scales):
        with open(self.dir / f"acceptance_{self.chain + 1:02d}.csv", "w") as fh:
            fh.write("parameter,acceptance_rate,proposal_scale\n")
            for n, a, s in zip(self.names, acceptance, scales):
                fh.write(f"{n},{_fmt(a)},{_fmt(s)}\n")
        if self.ckpt_path.exists():
            self.ckpt_path.unlink()


def _check_kind(block_name: str) -> str:
    """Which constraint a proposal to this block can break."""
    if block_name.startswith("trans."):
        return "wd" if block_name.startswith("trans.pWD") else "none"
    if block_name.startswith("emis.pi"):
        return "pi"
    if block_name.startswith("emis."):
        return "center"
    return "none"


def _feasible_part(check: str, theta: np.ndarray, model: HmmModel, ev: LikelihoodEvaluator, max_obs: float) -> bool:
    if check == "none":
        return True
    if check == "pi":
        pi = theta[model.layout.pi]
        return bool(pi[0] > pi[1] > pi[2])
    if check == "wd":
        probs = ev.transition_probs(theta)
        floor = model.spec.wd_floor
        return bool(probs[TRANSITION_VARS.index("pWD1")].min() > floor
                    and probs[TRANSITION_VARS.index("pWD2")].min() > floor)
    c = center(model.family, *ev.emission_grids(theta))
    return bool(np.all(c[0] < c[1]) and np.all(c[1] < c[2]) and c[2].max() <= max_obs and c[1].max() <= max_obs)


def run_chain(series: DailySeries, model: HmmModel, config: ChainConfig, init: HmmParams | str = "auto",
              chain: int = 0, writer: ChainWriter | None = None, resume: bool = False,
              fixed: tuple[str, ...] = ()) -> ChainResult:
    """One chain of scalar-at-a-time adaptive random-walk Metropolis.

    Every parameter gets a Gaussian proposal whose log scale moves by
    ``(rate - target) / sqrt(round)`` after each adaptation window, so the
    adaptation diminishes. Proposals that violate the identifiability
    constraints or give an impossible observation are rejected. Parameters
    named in ``fixed`` keep their initial values.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng([config.seed, chain])
    lay = model.layout
    n = lay.size
    ev = LikelihoodEvaluator(model, series)
    max_obs = series.max_observed()
    blocks = lay.blocks
    n_blocks = len(blocks)

    state = writer.load_checkpoint() if (writer is not None and resume) else None
    if state is not None:
        theta = np.array(state["theta"])
        log_scale = np.array(state["log_scale"])
        acc_window = np.array(state["acc_window"], dtype=np.int64)
        acc_total = np.array(state["acc_total"], dtype=np.int64)
        rounds = state["rounds"]
        start_it = state["iteration"]
        n_saved = state["n_saved"]
        rng.bit_generator.state = state["rng"]
        logger.info("chain %d resuming at iteration %d", chain + 1, start_it)
    else:
        if isinstance(init, str):
            if init != "auto":
                raise ValueError(f"unknown init {init!r}")
            params = auto_init(model, series, rng)
        else:
            params = init
            if check_constraints(params, max_obs):
                raise InitializationError("supplied init violates the identifiability constraints")
        theta = params.values.copy()
        log_scale = np.full(n, math.log(config.initial_scale))
        acc_window = np.zeros(n, dtype=np.int64)
        acc_total = np.zeros(n, dtype=np.int64)
        rounds = 0
        start_it = 0
        n_saved = 0
        if writer is not None:
            writer.start()

    prior = np.array([block_log_prior(theta, model, b) for b in range(n_blocks)])
    ll = ev.year_logliks(theta)
    if not np.isfinite(prior.sum() + ll.sum()):
        raise InitializationError("starting point has zero posterior density")

    pending_draws, pending_ll = [], []
    all_draws, all_ll = [], []
    kinds = [b.kind for b in blocks]
    checks = [_check_kind(blocks[lay.param_block[j]].name) for j in range(n)]
    unknown = set(fixed) - set(lay.names)
    if unknown:
        raise ValueError(f"unknown fixed parameter(s) {sorted(unknown)}")
    free = [j for j in range(n) if lay.names[j] not in set(fixed)]
    for it in range(start_it, config.n_iterations):
        for j in free:
            bi = lay.param_block[j]
            kind = kinds[bi]
            step = rng.standard_normal()
            logu = math.log(rng.random())
            prop = theta.copy()
            prop[j] += math.exp(log_scale[j]) * step
            touched = [bi] if kind != "sd" else [bi, blocks[bi].coef_block]
            new_prior = [block_log_prior(prop, model, b) for b in touched]
            if any(p == -math.inf for p in new_prior):
                continue
            d_prior = sum(new_prior) - sum(prior[b] for b in touched)
            if kind == "sd":
                new_ll = ll
                d_ll = 0.0
            else:
                if not _feasible_part(checks[j], prop, model, ev, max_obs):
                    continue
                new_ll = ev.year_logliks(prop)
                d_ll = new_ll.sum() - ll.sum()
                if not math.isfinite(d_ll):
                    continue
            if logu < d_prior + d_ll:
                theta = prop
                ll = new_ll
                for b, v in zip(touched, new_prior):
                    prior[b] = v
                acc_window[j] += 1
                acc_total[j] += 1
        done = it + 1
        if done % config.adaptation_interval == 0:
            rounds += 1
            rate = acc_window / config.adaptation_interval
            log_scale += (rate - config.target_acceptance) / math.sqrt(rounds)
            acc_window[:] = 0
        if done > config.burn_in and (done - config.burn_in) % config.thin == 0:
            pending_draws.append(theta.copy())
            pending_ll.append(np.array(ll, copy=True))
        if writer is not None and (done % config.checkpoint_every == 0 or done == config.n_iterations):
            writer.append(pending_draws, pending_ll)
            n_saved += len(pending_draws)
            all_draws.extend(pending_draws)
            all_ll.extend(pending_ll)
            pending_draws, pending_ll = [], []
            writer.checkpoint({
                "iteration": done, "theta": theta.tolist(), "log_scale": log_scale.tolist(),
                "acc_window": acc_window.tolist(), "acc_total": acc_total.tolist(), "rounds": rounds,
                "n_saved": n_saved, "rng": rng.bit_generator.state,
            })
    all_draws.extend(pending_draws)
    all_ll.extend(pending_ll)
    iters = max(config.n_iterations, 1)
    acceptance = acc_total / iters
    if writer is not None:
        # a resumed chain only holds the tail in memory; reload the full table
        draws, lls = _read_chain_tables(writer.draws_path, writer.ll_path)
        writer.finish(acceptance, np.exp(log_scale))
    else:
        draws = np.array(all_draws).reshape(-1, n)
        lls = np.array(all_ll).reshape(-1, model.n_years)
    seconds = time.perf_counter() - t0
    logger.info("chain %d: %d iterations in %.1fs, mean acceptance %.2f", chain + 1, config.n_iterations - start_it,
                seconds, acceptance.mean())
    return ChainResult(draws, lls, acceptance, np.exp(log_scale), seconds)


def _read_table(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(x) for x in r] for r in rows]) if rows else np.empty((0, 0))


def _read_chain_tables(draws_path: Path, ll_path: Path):
    return _read_table(draws_path), _read_table(ll_path)


# ---------------------------------------------------------------------------
# posterior samples

@dataclass
class PosteriorSamples:
    names: list
    draws: np.ndarray  # (n_chains, n_draws, n_params)
    year_loglik: np.ndarray  # (n_chains, n_draws, T)
    metadata: dict = field(default_factory=dict)
    acceptance: np.ndarray | None = None  # (n_chains, n_params)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def flat_draws(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def flat_year_loglik(self) -> np.ndarray:
        return self.year_loglik.reshape(-1, self.year_loglik.shape[2])

    def params(self, model: HmmModel, chain: int, i: int) -> HmmParams:
        return model.params(self.draws[chain, i].copy())

    def iter_params(self, model: HmmModel):
        for row in self.flat_draws():
            yield model.params(row.copy())

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        years = self.metadata.get("years", list(range(self.year_loglik.shape[2])))
        for c in range(self.n_chains):
            w = ChainWriter(d, c, self.names, years)
            w.start()
            w.append(self.draws[c], self.year_loglik[c])
            if self.acceptance is not None:
                w.finish(self.acceptance[c], np.full(len(self.names), np.nan))
        (d / "metadata.json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "PosteriorSamples":
        d = Path(directory)
        meta_path = d / "metadata.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"{d} holds no posterior samples (metadata.json missing)")
        meta = json.loads(meta_path.read_text())
        draws, lls, acc = [], [], []
        for c in range(meta["n_chains"]):
            dr, ll = _read_chain_tables(d / f"chain_{c + 1:02d}.csv", d / f"loglik_{c + 1:02d}.csv")
            draws.append(dr)
            lls.append(ll)
            ap = d / f"acceptance_{c + 1:02d}.csv"
            if ap.exists():
                with open(ap) as fh:
                    acc.append([float(r[1]) for r in list(csv.reader(fh))[1:]])
        with open(d / "chain_01.csv") as fh:
            names = fh.readline().strip().split(",")
        n = min(len(x) for x in draws)
        return cls(names, np.stack([x[:n] for x in draws]), np.stack([x[:n] for x in lls]), meta,
                   np.array(acc) if len(acc) == len(draws) else None)


def model_metadata(model: HmmModel, series: DailySeries, config: ChainConfig) -> dict:
    return {
        "format": "precip_hmm.posterior/1",
        "model_spec": model.spec.to_dict(),
        "n_years": model.n_years,
        "n_days": model.n_days,
        "k_season": model.basis_s.K if model.basis_s is not None else None,
        "k_year": model.basis_t.K if model.basis_t is not None else None,
        "years": series.years,
        "season": series.season.value,
        "station_id": series.station_id,
        "data_fingerprint": series.fingerprint(),
        "max_observed_cm": series.max_observed(),
        "chain_config": asdict(config),
        "n_chains": config.n_chains,
    }


def model_from_metadata(meta: dict, basis_s: SplineBasis | None = None, basis_t: SplineBasis | None = None) -> HmmModel:
    spec = dict(meta["model_spec"])
    if meta.get("k_season"):
        spec["k_season"] = meta["k_season"]
    if meta.get("k_year"):
        spec["k_year"] = meta["k_year"]
    return HmmModel.build(ModelSpec(**spec), meta["n_years"], meta["n_days"], basis_s, basis_t)


def _chain_job(args):
    series, model, config, chain, outdir, resume, init = args
    writer = ChainWriter(outdir, chain, model.layout.names, series.years) if outdir is not None else None
    return run_chain(series, model, config, init=init, chain=chain, writer=writer, resume=resume)


def run_chains(series: DailySeries, model: HmmModel, config: ChainConfig, outdir: str | Path | None = None,
               workers: int = 1, resume: bool = False, init: HmmParams | str = "auto") -> PosteriorSamples:
    """Run ``config.n_chains`` independent chains and collect the draws."""
    jobs = [(series, model, config, c, outdir, resume, init) for c in range(config.n_chains)]
    if workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.n_chains)) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    meta = model_metadata(model, series, config)
    meta["seconds_per_chain"] = [round(r.seconds, 3) for r in results]
    samples = PosteriorSamples(list(model.layout.names), np.stack([r.draws for r in results]),
                               np.stack([r.year_loglik for r in results]), meta,
                               np.stack([r.acceptance for r in results]))
    if outdir is not None:
        meta_for_disk = dict(meta)
        meta_for_disk.pop("seconds_per_chain")
        Path(outdir, "metadata.json").write_text(json.dumps(meta_for_disk, indent=2, sort_keys=True) + "\n")
    return samples
