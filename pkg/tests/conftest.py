from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

sys.path.insert(0, str(Path(__file__).parent))

from precip_hmm.ghcn import DailySeries, Season  # noqa: E402
from precip_hmm.model import HmmModel, ModelSpec  # noqa: E402


def make_series(values, first_year: int = 2001, season: str = "JJA", day_count=None) -> DailySeries:
    """Series on a custom grid; NaN marks missing days. Rows are full length unless ``day_count`` says otherwise."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    if day_count is None:
        day_count = np.full(v.shape[0], v.shape[1])
    return DailySeries("TEST", Season(season), list(range(first_year, first_year + v.shape[0])), v,
                       np.isnan(v), day_count)


def small_model(family: str = "gamma", n_years: int = 5, n_days: int = 6, k: int = 4,
                season_terms: bool = True, year_terms: bool = True) -> HmmModel:
    spec = ModelSpec(family=family, season_terms=season_terms, year_terms=year_terms, k_season=k, k_year=k)
    return HmmModel.build(spec, n_years, n_days)


def random_theta(model: HmmModel, rng: np.random.Generator) -> np.ndarray:
    """Parameters with spline wiggle; GPD shapes kept in a moderate range."""
    lay = model.layout
    theta = 0.8 * rng.standard_normal(lay.size)
    for b in lay.blocks:
        if b.kind == "sd":
            theta[b.slice] = rng.uniform(0.1, 2.0)
    for k in (1, 4, 5):
        c = lay.curves[f"scale{k}"]
        theta[c.b0] = rng.normal(-0.5, 0.5)
        if model.family == "gpd":
            theta[lay.curves[f"shape{k}"].b0] = rng.uniform(0.0, 0.4)
            for part in ("season", "year"):
                sl = getattr(lay.curves[f"shape{k}"], part)
                if sl is not None:
                    theta[sl] *= 0.05
    return theta


def curve_at(model: HmmModel, theta: np.ndarray, name: str, s: int, t: int) -> float:
    """``b0 + X_s[s] . beta_s + X_t[t] . beta_t`` by explicit loops."""
    c = model.layout.curves[name]
    total = float(theta[c.b0])
    if c.season is not None:
        row = model.basis_s.X[s]
        coefs = theta[c.season]
        total += sum(float(row[j]) * float(coefs[j]) for j in range(len(coefs)))
    if c.year is not None:
        row = model.basis_t.X[t]
        coefs = theta[c.year]
        total += sum(float(row[j]) * float(coefs[j]) for j in range(len(coefs)))
    return total


def oracle_inputs(model: HmmModel, theta: np.ndarray, values, t: int):
    """Per-day transition matrices, initial weights and emission log-probs for year ``t``."""
    import math

    import oracles

    lay = model.layout
    z = list(theta[lay.init]) + [0.0]
    m = max(z)
    w = [math.exp(x - m) for x in z]
    init = [x / sum(w) for x in w]
    pis = [float(expit(theta[i])) for i in range(lay.pi.start, lay.pi.stop)]
    P_seq, logem = [], []
    for s, r in enumerate(values):
        p = {v: float(expit(curve_at(model, theta, v, s, t))) for v in oracles.VARS}
        P_seq.append(oracles.transition_matrix(p))
        row = []
        for e, k in enumerate((1, 4, 5)):
            a = curve_at(model, theta, f"shape{k}", s, t)
            b = math.exp(curve_at(model, theta, f"scale{k}", s, t))
            if model.family == "gamma":
                a = math.exp(a)
            rr = r if np.isnan(r) or r == 0 else oracles.inch_reading(r)
            row.append(oracles.emission_logprob(rr, pis[e], model.family, a, b, model.spec.rounding_halfwidth))
        logem.append([row[0], row[0], row[0], row[1], row[2]])
    return P_seq, init, logem


def random_day_values(n: int, rng: np.random.Generator, missing_rate: float = 0.2) -> np.ndarray:
    """Zeros, 0.01 inch readings stored as tenths of mm, off-grid values and gaps."""
    out = np.empty(n)
    for i in range(n):
        u = rng.random()
        if u < missing_rate:
            out[i] = np.nan
        elif u < 0.5:
            out[i] = 0.0
        elif u < 0.85:
            out[i] = round(int(rng.integers(1, 120)) * 2.54) / 100.0
        else:
            out[i] = round(rng.uniform(0.05, 3.0), 3)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance criteria report: one PASS/FAIL line per criterion

_CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    _, ok = _CRITERIA.get(n, (title, True))
    _CRITERIA[n] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")
