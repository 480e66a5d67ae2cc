"""Five-state precipitation HMM: parameter layout, transitions, emissions.

States 1-3 are clone dry states sharing one emission law; states 4 and 5
are wet. Every transition probability and the wet-state emission shape and
scale are spline functions of day-of-season ``s`` and year ``t``. All
parameters live in one flat vector addressed through :class:`ParamLayout`,
which is also what gets serialized.

Grids are indexed ``[t, s]`` with both indices 0-based; state arguments
use the 1-based labels 1..5.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, gammainc, gammaincc, gammaincinv, gammaln, log_expit

from . import _kernels
from .splines import SplineBasis, build_basis

logger = logging.getLogger(__name__)

TRANSITION_VARS = ("pD1", "pD2", "pD3", "pDW1", "pW1", "pW2", "pW12", "pW21", "pWD1", "pWD2")
VAR_GROUP = {"pD1": "pD", "pD2": "pD", "pD3": "pD"}
COEF_GROUPS = ("pD", "pDW1", "pW1", "pW2", "pW12", "pW21", "pWD1", "pWD2")
EMISSION_STATES = (1, 4, 5)
# emission-law index (0 dry, 1 first wet, 2 second wet) for states 1..5
STATE_EMISSION = np.array([0, 0, 0, 1, 2])
FAMILIES = ("gamma", "gpd")
N_STATES = 5


@dataclass(frozen=True)
class ModelSpec:
    family: str = "gamma"
    season_terms: bool = True
    year_terms: bool = True
    k_season: int = 20
    k_year: int = 20
    intercept_sd: float = 1.5
    sd_lower: float = 0.001
    sd_upper: float = 10.0
    rounding_halfwidth: float = 0.0127
    dirichlet_alpha: float = 1.0
    wd_floor: float = 0.4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not 0 < self.sd_lower < self.sd_upper:
            raise ValueError("need 0 < sd_lower < sd_upper")
        if self.rounding_halfwidth < 0:
            raise ValueError("rounding_halfwidth must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Block:
    """A contiguous run of parameters sharing one prior term."""

    name: str
    start: int
    size: int
    kind: str  # trans_b0 | emis_b0 | coef | sd | pi | init
    sd_block: int = -1  # coef blocks: index of their sd block
    coef_block: int = -1  # sd blocks: index of the coefficients they scale
    penalized: tuple = ()

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True)
class Curve:
    """Intercept plus optional season and year spline coefficients."""

    name: str
    b0: int
    season: slice | None = None
    year: slice | None = None


@dataclass
class ParamLayout:
    names: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    param_block: np.ndarray | None = None
    pi: slice | None = None
    init: slice | None = None

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def _add(self, name: str, kind: str, labels: list[str], **kw) -> int:
        start = len(self.names)
        self.names.extend(labels)
        self.blocks.append(Block(name, start, len(labels), kind, **kw))
        return len(self.blocks) - 1

    def _spline_terms(self, prefix: str, basis_s: SplineBasis | None, basis_t: SplineBasis | None):
        out = {}
        for term, basis in (("season", basis_s), ("year", basis_t)):
            if basis is None:
                out[term] = None
                continue
            labels = [f"{prefix}.{term}[{i + 1}]" for i in range(basis.K)]
            ci = self._add(f"{prefix}.{term}", "coef", labels, penalized=tuple(bool(p) for p in basis.penalized))
            si = self._add(f"{prefix}.{term}_sd", "sd", [f"{prefix}.{term}_sd"], coef_block=ci)
            b = self.blocks[ci]
            self.blocks[ci] = Block(b.name, b.start, b.size, b.kind, sd_block=si, penalized=b.penalized)
            out[term] = b.slice
        return out

    @classmethod
    def build(cls, basis_s: SplineBasis | None, basis_t: SplineBasis | None) -> "ParamLayout":
        lay = cls()
        b0 = {}
        for v in TRANSITION_VARS:
            i = lay._add(f"trans.{v}.b0", "trans_b0", [f"trans.{v}.b0"])
            b0[v] = lay.blocks[i].start
        terms = {g: lay._spline_terms(f"trans.{g}", basis_s, basis_t) for g in COEF_GROUPS}
        for v in TRANSITION_VARS:
            g = terms[VAR_GROUP.get(v, v)]
            lay.curves[v] = Curve(v, b0[v], g["season"], g["year"])
        start = len(lay.names)
        for k in EMISSION_STATES:
            lay._add(f"emis.pi{k}.logit", "pi", [f"emis.pi{k}.logit"])
        lay.pi = slice(start, start + 3)
        for k in EMISSION_STATES:
            for what in ("shape", "scale"):
                name = f"{what}{k}"
                i = lay._add(f"emis.{name}.b0", "emis_b0", [f"emis.{name}.b0"])
                if k == 1:
                    lay.curves[name] = Curve(name, lay.blocks[i].start)
                else:
                    t = lay._spline_terms(f"emis.{name}", basis_s, basis_t)
                    lay.curves[name] = Curve(name, lay.blocks[i].start, t["season"], t["year"])
        i = lay._add("init.alr", "init", [f"init.alr[{j + 1}]" for j in range(N_STATES - 1)])
        lay.init = lay.blocks[i].slice
        lay.param_block = np.empty(len(lay.names), dtype=np.int64)
        for bi, b in enumerate(lay.blocks):
            lay.param_block[b.slice] = bi
        lay._index = {n: i for i, n in enumerate(lay.names)}
        return lay


def _clamp_k(requested: int, n_points: int, label: str) -> int:
    k = min(requested, n_points - 1)
    if k < requested:
        logger.warning("%s basis dimension reduced from %d to %d (only %d grid points)",
                       label, requested, k, n_points)
    if k < 3:
        raise ValueError(f"{label} grid of {n_points} points is too short for a spline term")
    return k


@dataclass(frozen=True, eq=False)
class HmmModel:
    """Static structure shared by all parameter values: spec, grid, bases."""

    spec: ModelSpec
    n_years: int
    n_days: int
    basis_s: SplineBasis | None
    basis_t: SplineBasis | None
    layout: ParamLayout

    @classmethod
    def build(cls, spec: ModelSpec, n_years: int, n_days: int,
              basis_s: SplineBasis | None = None, basis_t: SplineBasis | None = None) -> "HmmModel":
        if spec.season_terms and basis_s is None:
            basis_s = build_basis(np.arange(1, n_days + 1), _clamp_k(spec.k_season, n_days, "season"))
        if spec.year_terms and basis_t is None:
            basis_t = build_basis(np.arange(1, n_years + 1), _clamp_k(spec.k_year, n_years, "year"))
        if not spec.season_terms:
            basis_s = None
        if not spec.year_terms:
            basis_t = None
        if basis_s is not None and basis_s.X.shape[0] != n_days:
            raise ValueError("season basis rows do not match the number of days")
        if basis_t is not None and basis_t.X.shape[0] != n_years:
            raise ValueError("year basis rows do not match the number of years")
        return cls(spec, n_years, n_days, basis_s, basis_t, ParamLayout.build(basis_s, basis_t))

    @property
    def family(self) -> str:
        return self.spec.family

    def curve_grid(self, theta: np.ndarray, curve: Curve) -> np.ndarray:
        """``b0 + X(s) beta_s + X(t) beta_t`` on the full ``(T, S)`` grid."""
        out = np.full((self.n_years, self.n_days), theta[curve.b0])
        if curve.season is not None:
            out += (self.basis_s.X @ theta[curve.season])[None, :]
        if curve.year is not None:
            out += (self.basis_t.X @ theta[curve.year])[:, None]
        return out

    def params(self, values) -> "HmmParams":
        return HmmParams(self, np.asarray(values, dtype=float))

    def params_from_dict(self, d: dict) -> "HmmParams":
        missing = [n for n in self.layout.names if n not in d]
        if missing:
            raise KeyError(f"parameter map lacks {missing[:5]}{'...' if len(missing) > 5 else ''}")
        return self.params([float(d[n]) for n in self.layout.names])

    def constant_params(self, trans: dict, pi, shape, scale, init) -> "HmmParams":
        """Parameters with every spline coefficient at zero.

        ``trans`` maps transition variable names to probabilities; ``shape``
        and ``scale`` give the natural-scale emission parameters for states
        1, 4, 5 (GPD shape is used as is).
        """
        lay = self.layout
        theta = np.zeros(lay.size)
        for v in TRANSITION_VARS:
            theta[lay.curves[v].b0] = _logit(trans[v])
        theta[lay.pi] = [_logit(p) for p in pi]
        for k, a, b in zip(EMISSION_STATES, shape, scale):
            theta[lay.curves[f"shape{k}"].b0] = math.log(a) if self.family == "gamma" else a
            theta[lay.curves[f"scale{k}"].b0] = math.log(b)
        init = np.asarray(init, dtype=float)
        theta[lay.init] = np.log(init[:-1] / init[-1])
        for b in lay.blocks:
            if b.kind == "sd":
                theta[b.slice] = 0.5
        return self.params(theta)


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


class HmmParams:
    """One point in parameter space, bound to its :class:`HmmModel`."""

    def __init__(self, model: HmmModel, values: np.ndarray):
        if values.shape != (model.layout.size,):
            raise ValueError(f"expected {model.layout.size} parameters, got {values.shape}")
        self.model = model
        self.values = values

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.model.layout.index(name)])

    def with_value(self, name: str, value: float) -> "HmmParams":
        v = self.values.copy()
        v[self.model.layout.index(name)] = value
        return HmmParams(self.model, v)

    def to_dict(self) -> dict:
        return {n: float(x) for n, x in zip(self.model.layout.names, self.values)}

    @property
    def pi(self) -> np.ndarray:
        return expit(self.values[self.model.layout.pi])

    @property
    def initial(self) -> np.ndarray:
        return alr_inverse(self.values[self.model.layout.init])

    def transition_probs(self) -> np.ndarray:
        """Probabilities of the ten transition variables, shape ``(10, T, S)``."""
        m = self.model
        return np.stack([expit(m.curve_grid(self.values, m.layout.curves[v])) for v in TRANSITION_VARS])

    def transition_matrices(self) -> np.ndarray:
        return _kernels.assemble_transitions(self.transition_probs())

    def emission_grids(self) -> tuple[np.ndarray, np.ndarray]:
        """Natural-scale emission shape and scale, each ``(3, T, S)``."""
        m = self.model
        shape = np.stack([m.curve_grid(self.values, m.layout.curves[f"shape{k}"]) for k in EMISSION_STATES])
        scale = np.stack([m.curve_grid(self.values, m.layout.curves[f"scale{k}"]) for k in EMISSION_STATES])
        if m.family == "gamma":
            shape = np.exp(shape)
        return shape, np.exp(scale)

    def sds(self) -> np.ndarray:
        lay = self.model.layout
        return np.array([self.values[b.start] for b in lay.blocks if b.kind == "sd"])


def alr_inverse(z) -> np.ndarray:
    z = np.append(np.asarray(z, dtype=float), 0.0)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def assemble_transition_matrix(p) -> np.ndarray:
    """5x5 transition matrix from the ten variable probabilities.

    ``p`` is a mapping keyed by :data:`TRANSITION_VARS` or a length-10
    sequence in that order. Remainders are formed as products so every
    entry stays in [0, 1].
    """
    if isinstance(p, dict):
        p = [p[v] for v in TRANSITION_VARS]
    arr = np.asarray(p, dtype=float).reshape(10, 1, 1)
    return _kernels.assemble_transitions(arr)[0, 0]


def transition_matrix(params: HmmParams, s: int, t: int) -> np.ndarray:
    m = params.model
    probs = [expit(_curve_point(m, params.values, m.layout.curves[v], s, t)) for v in TRANSITION_VARS]
    return assemble_transition_matrix(probs)


def _curve_point(m: HmmModel, theta, curve: Curve, s: int, t: int) -> float:
    if not (0 <= s < m.n_days and 0 <= t < m.n_years):
        raise IndexError(f"(s={s}, t={t}) outside the {m.n_days}x{m.n_years} grid")
    out = theta[curve.b0]
    if curve.season is not None:
        out += m.basis_s.X[s] @ theta[curve.season]
    if curve.year is not None:
        out += m.basis_t.X[t] @ theta[curve.year]
    return float(out)


# ---------------------------------------------------------------------------
# emission distributions

def cdf_sf(x, family: str, shape, scale) -> tuple[np.ndarray, np.ndarray]:
    """CDF and survival function of the continuous emission component."""
    x, shape, scale = np.broadcast_arrays(np.asarray(x, float), np.asarray(shape, float), np.asarray(scale, float))
    x = np.maximum(x, 0.0)
    if family == "gamma":
        z = x / scale
        return gammainc(shape, z), gammaincc(shape, z)
    if family == "gpd":
        xi = shape
        z = xi * x / scale
        small = np.abs(xi) < 1e-10
        beyond = (xi < 0) & (z <= -1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_sf = np.where(small, -x / scale, -np.log1p(np.where(beyond, 0.0, z)) / np.where(small, 1.0, xi))
        log_sf = np.where(beyond, -np.inf, log_sf)
        return -np.expm1(log_sf), np.exp(log_sf)
    raise ValueError(f"unknown family {family!r}")


def interval_mass(lo, hi, family: str, shape, scale) -> np.ndarray:
    """``F(hi) - F(lo)``, taken from the survival side in the upper tail."""
    if family != "gamma":
        F_lo, S_lo = cdf_sf(lo, family, shape, scale)
        F_hi, S_hi = cdf_sf(hi, family, shape, scale)
        return np.where(F_lo > 0.5, S_lo - S_hi, F_hi - F_lo)
    lo, hi, shape, scale = np.broadcast_arrays(*(np.asarray(a, float) for a in (lo, hi, shape, scale)))
    F_lo = gammainc(shape, np.maximum(lo, 0.0) / scale)
    out = gammainc(shape, np.maximum(hi, 0.0) / scale) - F_lo
    tail = F_lo > 0.5
    if tail.any():
        a, b = shape[tail], scale[tail]
        out[tail] = gammaincc(a, lo[tail] / b) - gammaincc(a, hi[tail] / b)
    return out


def mixture_logprob(r, pi, family: str, shape, scale, delta: float) -> np.ndarray:
    """Log-probability of a rounded observation under the zero-inflated law.

    ``r`` is in cm with NaN for missing (contributing 0). A reported zero
    absorbs the point mass and the continuous mass below ``delta``; a
    positive value gets the continuous mass of ``[r - delta, r + delta]``.
    """
    r = np.asarray(r, dtype=float)
    pi = np.asarray(pi, dtype=float)
    for name, val in (("pi", pi), ("shape", shape), ("scale", scale)):
        if not np.all(np.isfinite(val)):
            raise ValueError(f"non-finite emission parameter {name}")
    r, pi, shape, scale = np.broadcast_arrays(r, pi, np.asarray(shape, float), np.asarray(scale, float))
    out = np.zeros(r.shape)
    zero = r == 0
    pos = r > 0
    with np.errstate(divide="ignore"):
        if zero.any():
            Fd, _ = cdf_sf(delta, family, shape[zero], scale[zero])
            p = pi[zero]
            out[zero] = np.log(p + (1.0 - p) * Fd)
        if pos.any():
            rp = r[pos]
            mass = interval_mass(np.maximum(rp - delta, 0.0), rp + delta, family, shape[pos], scale[pos])
            out[pos] = np.log1p(-pi[pos]) + np.log(np.maximum(mass, 0.0))
    return out


def emission_logprob(r, state: int, params: HmmParams, s: int, t: int,
                     rounding_halfwidth: float | None = None) -> float:
    """Log-probability of observation ``r`` (cm, or None/NaN) in ``state`` at ``(s, t)``."""
    if r is None or (isinstance(r, float) and math.isnan(r)):
        return 0.0
    e = int(STATE_EMISSION[state - 1])
    k = EMISSION_STATES[e]
    m = params.model
    delta = m.spec.rounding_halfwidth if rounding_halfwidth is None else rounding_halfwidth
    a = _curve_point(m, params.values, m.layout.curves[f"shape{k}"], s, t)
    b = math.exp(_curve_point(m, params.values, m.layout.curves[f"scale{k}"], s, t))
    if m.family == "gamma":
        a = math.exp(a)
    return float(mixture_logprob(float(reading_cm(r)), params.pi[e], m.family, a, b, delta))


def center(family: str, shape, scale) -> np.ndarray:
    """Gamma mean or GPD median."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if family == "gamma":
        return shape * scale
    small = np.abs(shape) < 1e-10
    with np.errstate(divide="ignore", invalid="ignore"):
        med = scale * np.expm1(shape * math.log(2.0)) / np.where(small, 1.0, shape)
    return np.where(small, scale * math.log(2.0), med)


def state_center(params: HmmParams, state: int, s: int, t: int) -> float:
    if state not in EMISSION_STATES:
        raise ValueError(f"state must be one of {EMISSION_STATES}")
    m = params.model
    a = _curve_point(m, params.values, m.layout.curves[f"shape{state}"], s, t)
    b = math.exp(_curve_point(m, params.values, m.layout.curves[f"scale{state}"], s, t))
    if m.family == "gamma":
        a = math.exp(a)
    return float(center(m.family, a, b))


# ---------------------------------------------------------------------------
# identifiability constraints

@dataclass(frozen=True)
class Violation:
    code: str  # pi_order | center_order | wd_floor | center_max | sd_bounds
    detail: str
    s: int | None = None
    t: int | None = None


def _first(bad: np.ndarray) -> tuple[int, int]:
    t, s = np.argwhere(bad)[0]
    return int(s), int(t)


def check_constraints(params: HmmParams, max_obs_precip: float = math.inf,
                      probs: np.ndarray | None = None, emission: tuple | None = None) -> list[Violation]:
    """Identifiability constraints; an empty list means feasible.

    ``probs`` and ``emission`` accept precomputed ``transition_probs()`` and
    ``emission_grids()`` results.
    """
    m = params.model
    spec = m.spec
    out = []
    pi = params.pi
    if not (pi[0] > pi[1] > pi[2]):
        out.append(Violation("pi_order", f"need pi1 > pi4 > pi5, got {pi.round(6).tolist()}"))
    shape, scale = params.emission_grids() if emission is None else emission
    c = center(m.family, shape, scale)
    bad = ~((c[0] < c[1]) & (c[1] < c[2]))
    if bad.any():
        s, t = _first(bad)
        out.append(Violation("center_order", "state centres must increase 1 -> 4 -> 5", s, t))
    if probs is None:
        probs = params.transition_probs()
    for v in ("pWD1", "pWD2"):
        bad = ~(probs[TRANSITION_VARS.index(v)] > spec.wd_floor)
        if bad.any():
            s, t = _first(bad)
            out.append(Violation("wd_floor", f"{v} must exceed {spec.wd_floor}", s, t))
    bad = ~(c[1:] <= max_obs_precip).all(axis=0)
    if bad.any():
        s, t = _first(bad)
        out.append(Violation("center_max", f"wet-state centre exceeds max observed {max_obs_precip}", s, t))
    sds = params.sds()
    if np.any((sds <= spec.sd_lower) | (sds >= spec.sd_upper)):
        out.append(Violation("sd_bounds", f"spline sd outside ({spec.sd_lower}, {spec.sd_upper})"))
    return out


def feasible(params: HmmParams, max_obs_precip: float, probs: np.ndarray, emission: tuple) -> bool:
    """Fast boolean form of :func:`check_constraints`."""
    m = params.model
    pi = params.pi
    if not (pi[0] > pi[1] > pi[2]):
        return False
    sds = params.sds()
    if np.any((sds <= m.spec.sd_lower) | (sds >= m.spec.sd_upper)):
        return False
    i1, i2 = TRANSITION_VARS.index("pWD1"), TRANSITION_VARS.index("pWD2")
    if probs[i1].min() <= m.spec.wd_floor or probs[i2].min() <= m.spec.wd_floor:
        return False
    c = center(m.family, *emission)
    if not (np.all(c[0] < c[1]) and np.all(c[1] < c[2])):
        return False
    return bool(c[2].max() <= max_obs_precip and c[1].max() <= max_obs_precip)


# ---------------------------------------------------------------------------
# priors

_LOG_2PI = math.log(2 * math.pi)


def block_log_prior(theta: np.ndarray, model: HmmModel, bi: int) -> float:
    spec = model.spec
    b = model.layout.blocks[bi]
    x = theta[b.slice]
    if b.kind in ("trans_b0", "emis_b0"):
        sd = spec.intercept_sd
        return float(-0.5 * (x[0] / sd) ** 2 - math.log(sd) - 0.5 * _LOG_2PI)
    if b.kind == "coef":
        sd = theta[model.layout.blocks[b.sd_block].start]
        if not spec.sd_lower < sd < spec.sd_upper:
            return -math.inf
        pen = np.asarray(b.penalized)
        xp = x[pen]
        return float(-0.5 * np.dot(xp, xp) / sd ** 2 - xp.size * (math.log(sd) + 0.5 * _LOG_2PI))
    if b.kind == "sd":
        sd = x[0]
        if not spec.sd_lower < sd < spec.sd_upper:
            return -math.inf
        return -math.log(spec.sd_upper - spec.sd_lower)
    if b.kind == "pi":
        # uniform on the probability scale
        return float(log_expit(x[0]) + log_expit(-x[0]))
    if b.kind == "init":
        a = spec.dirichlet_alpha
        logw = np.log(alr_inverse(x))
        return float(a * logw.sum() + gammaln(N_STATES * a) - N_STATES * gammaln(a))
    raise ValueError(f"unknown block kind {b.kind}")


def log_prior(params: HmmParams) -> float:
    m = params.model
    return float(sum(block_log_prior(params.values, m, i) for i in range(len(m.layout.blocks))))


# ---------------------------------------------------------------------------
# sampling

REPORTING_UNIT_CM = 0.0254  # 0.01 inch


def round_to_reporting(x) -> np.ndarray:
    """Round cm amounts to 0.01 inch, stored as whole tenths of mm like GHCN."""
    hundredths_in = np.rint(np.asarray(x, dtype=float) / REPORTING_UNIT_CM)
    return np.rint(hundredths_in * 2.54) / 100.0


def reading_cm(r) -> np.ndarray:
    """Recover the 0.01 inch reading behind an amount stored as whole tenths of mm.

    A value within half a tenth of mm of the inch grid is moved onto it, so
    the rounding interval is centred on the instrument reading. Other values
    pass through unchanged.
    """
    r = np.asarray(r, dtype=float)
    snapped = np.rint(r / REPORTING_UNIT_CM) * REPORTING_UNIT_CM
    return np.where(np.abs(snapped - r) <= 0.005 + 1e-9, snapped, r)


def sample_emission(states: np.ndarray, pi: np.ndarray, shape: np.ndarray, scale: np.ndarray,
                    family: str, rng: np.random.Generator) -> np.ndarray:
    """Draw rounded precipitation for a ``(T, S)`` grid of 0-based states.

    ``shape`` and ``scale`` are ``(3, T, S)`` natural-scale emission grids.
    Random numbers are drawn for every cell so consumption does not depend
    on the states.
    """
    e = STATE_EMISSION[states]
    tt, ss = np.indices(states.shape)
    a = shape[e, tt, ss]
    b = scale[e, tt, ss]
    dry = rng.random(states.shape) < pi[e]
    u = rng.random(states.shape)
    if family == "gamma":
        amount = gammaincinv(a, u) * b
    else:
        small = np.abs(a) < 1e-10
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            amount = np.where(small, -b * np.log1p(-u), b * np.expm1(-a * np.log1p(-u)) / np.where(small, 1.0, a))
    amount = np.where(dry, 0.0, amount)
    return round_to_reporting(amount)
