"""Independent reference implementations used by the tests.

Each oracle is written from the defining formulas with plain Python, scipy
distributions or mpmath, and shares no code with the package.
"""

from __future__ import annotations

import itertools
import math
import statistics

import mpmath
import numpy as np
from scipy import stats

VARS = ("pD1", "pD2", "pD3", "pDW1", "pW1", "pW2", "pW12", "pW21", "pWD1", "pWD2")


def transition_matrix(p: dict) -> list[list[float]]:
    """5x5 matrix from the ten probabilities, entry by entry."""
    P = [[0.0] * 5 for _ in range(5)]
    for i, v in enumerate(("pD1", "pD2", "pD3")):
        P[i][i] = p[v]
        q = (1 - p[v]) * p["pDW1"]
        P[i][3] = q
        P[i][4] = 1 - p[v] - q
    for row, stay, cross, col_stay, col_cross in ((3, "pW1", "pW12", 3, 4), (4, "pW2", "pW21", 4, 3)):
        r = (1 - p[stay]) * p[cross]
        u1 = (1 - p[stay] - r) * p["pWD1"]
        u2 = (1 - p[stay] - r - u1) * p["pWD2"]
        P[row][col_stay] = p[stay]
        P[row][col_cross] = r
        P[row][0] = u1
        P[row][1] = u2
        P[row][2] = 1 - p[stay] - r - u1 - u2
    return P


def _dist(family: str, shape: float, scale: float):
    return stats.gamma(shape, scale=scale) if family == "gamma" else stats.genpareto(shape, scale=scale)


def continuous_cdf(x: float, family: str, shape: float, scale: float) -> float:
    return float(_dist(family, shape, scale).cdf(max(x, 0.0)))


def inch_reading(r: float) -> float:
    """The 0.01 inch reading a tenths-of-mm value was converted from, if it was one."""
    k = round(r / 0.0254)
    return k * 0.0254 if abs(k * 0.0254 - r) <= 0.005 + 1e-9 else r


def emission_logprob(r, pi: float, family: str, shape: float, scale: float, delta: float) -> float:
    if r is None or (isinstance(r, float) and math.isnan(r)):
        return 0.0
    F = lambda x: continuous_cdf(x, family, shape, scale)  # noqa: E731
    if r == 0:
        return math.log(pi + (1 - pi) * F(delta))
    lo, hi = max(r - delta, 0.0), r + delta
    if F(lo) > 0.5:
        d = _dist(family, shape, scale)
        mass = float(d.sf(lo) - d.sf(hi))
    else:
        mass = F(hi) - F(lo)
    if pi >= 1 or mass <= 0:
        return -math.inf
    return math.log(1 - pi) + math.log(mass)


def _logsumexp(xs) -> float:
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


def path_log_probs(P_seq, init, logem) -> dict[tuple, float]:
    """Joint log-probability of every state path and the observations.

    ``P_seq[s]`` is the matrix used to move into day ``s`` (ignored for
    ``s = 0``); ``logem[s][k]`` is the emission log-probability of day ``s``
    in 0-based state ``k``.
    """
    n = len(logem)
    out = {}
    for path in itertools.product(range(5), repeat=n):
        lp = math.log(init[path[0]]) if init[path[0]] > 0 else -math.inf
        lp += logem[0][path[0]]
        for s in range(1, n):
            a = P_seq[s][path[s - 1]][path[s]]
            lp += math.log(a) if a > 0 else -math.inf
            lp += logem[s][path[s]]
        out[path] = lp
    return out


def enumerate_loglik(P_seq, init, logem) -> float:
    return _logsumexp(path_log_probs(P_seq, init, logem).values())


def path_posterior(P_seq, init, logem) -> dict[tuple, float]:
    lps = path_log_probs(P_seq, init, logem)
    total = _logsumexp(lps.values())
    return {k: math.exp(v - total) for k, v in lps.items() if v != -math.inf}


def smoothing_marginals(P_seq, init, logem) -> np.ndarray:
    post = path_posterior(P_seq, init, logem)
    n = len(logem)
    out = np.zeros((n, 5))
    for path, w in post.items():
        for s, k in enumerate(path):
            out[s, k] += w
    return out


def sens_slope(years, values) -> float:
    slopes = []
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            slopes.append((values[j] - values[i]) / (years[j] - years[i]))
    slopes.sort()
    m = len(slopes)
    mid = slopes[m // 2] if m % 2 else (slopes[m // 2 - 1] + slopes[m // 2]) / 2
    return mid * 10.0


def mk_S(values) -> int:
    S = 0
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            d = values[j] - values[i]
            S += int(d > 0) - int(d < 0)
    return S


def mk_permutation_variance(values, n_perm: int, rng: np.random.Generator) -> float:
    v = np.asarray(values, dtype=float)
    i, j = np.triu_indices(v.size, k=1)
    S = np.empty(n_perm)
    for b in range(n_perm):
        w = rng.permutation(v)
        S[b] = np.sign(w[j] - w[i]).sum()
    return float(S.var())


def rubin(pairs) -> tuple[float, float, float]:
    """Continuity-corrected Rubin combination at 50-digit precision: (S_bar, T, z)."""
    with mpmath.workdps(50):
        Sc = [mpmath.mpf(S) - mpmath.sign(S) for S, _ in pairs]
        M = len(pairs)
        mean = mpmath.fsum(Sc) / M
        W = mpmath.fsum(mpmath.mpf(v) for _, v in pairs) / M
        B = mpmath.fsum((s - mean) ** 2 for s in Sc) / (M - 1) if M > 1 else mpmath.mpf(0)
        T = W + (1 + mpmath.mpf(1) / M) * B
        z = mean / mpmath.sqrt(T) if mean != 0 else mpmath.mpf(0)
        return float(mean), float(T), float(z)


def waic(ll) -> tuple[float, float]:
    """Year-grouped WAIC at 50-digit precision; ``ll`` is (n_samples, T)."""
    with mpmath.workdps(50):
        n, T = len(ll), len(ll[0])
        lppd = mpmath.mpf(0)
        p = mpmath.mpf(0)
        for t in range(T):
            col = [mpmath.mpf(ll[s][t]) for s in range(n)]
            lppd += mpmath.log(mpmath.fsum(mpmath.exp(c) for c in col) / n)
            m = mpmath.fsum(col) / n
            p += mpmath.fsum((c - m) ** 2 for c in col) / (n - 1)
        return float(-2 * (lppd - p)), float(p)


def classic_split_rhat(chains: np.ndarray) -> float:
    """Split R-hat from the between/within variances of the raw draws; ``chains`` is (C, N)."""
    half = chains.shape[1] // 2
    parts = [c[:half] for c in chains] + [c[half:2 * half] for c in chains]
    n = half
    means = [statistics.fmean(p) for p in parts]
    grand = statistics.fmean(means)
    B = n * sum((m - grand) ** 2 for m in means) / (len(parts) - 1)
    W = statistics.fmean(statistics.variance(p) for p in parts)
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile from a sorted copy."""
    s = sorted(values)
    h = (len(s) - 1) * q / 100
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def ar1(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho * rho)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x
