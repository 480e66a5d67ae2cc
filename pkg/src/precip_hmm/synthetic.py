"""Synthetic stations drawn from a known constant-parameter model."""

from __future__ import annotations

import numpy as np

from .ghcn import DailySeries, Season, season_length
from .model import HmmModel, HmmParams, ModelSpec
from .predictive import simulate_series

DEFAULT_TRANSITIONS = {
    "pD1": 0.95, "pD2": 0.8, "pD3": 0.5, "pDW1": 0.7, "pW1": 0.4, "pW2": 0.3,
    "pW12": 0.3, "pW21": 0.4, "pWD1": 0.6, "pWD2": 0.5,
}
DEFAULT_PI = (0.97, 0.4, 0.05)
DEFAULT_GAMMA = ((0.5, 1.5, 2.0), (0.05, 0.2, 1.0))  # shapes, scales for states 1, 4, 5
DEFAULT_INIT = (0.4, 0.2, 0.2, 0.1, 0.1)


def season_grid(season: Season | str, years: list[int]) -> tuple[np.ndarray, int]:
    day_count = np.array([season_length(season, y) for y in years], dtype=np.int64)
    return day_count, int(day_count.max())


def blank_series(season: Season | str, years: list[int], station_id: str = "SYNTHETIC") -> DailySeries:
    day_count, width = season_grid(season, years)
    vals = np.zeros((len(years), width))
    return DailySeries(station_id, Season(season), list(years), vals, np.zeros_like(vals, dtype=bool), day_count)


def constant_truth(model: HmmModel, transitions: dict | None = None, pi=DEFAULT_PI,
                   shape=None, scale=None, init=DEFAULT_INIT) -> HmmParams:
    """Known generating parameters with all spline terms at zero."""
    if shape is None or scale is None:
        if model.family == "gamma":
            shape, scale = DEFAULT_GAMMA
        else:
            shape, scale = (0.05, 0.1, 0.15), (0.04, 0.35, 1.2)
    return model.constant_params(transitions or DEFAULT_TRANSITIONS, pi, shape, scale, init)


def synthetic_station(n_years: int = 20, first_year: int = 2002, season: Season | str = Season.JJA,
                      family: str = "gamma", seed: int = 0, missing_rate: float = 0.0,
                      params: HmmParams | None = None, station_id: str = "SYNTHETIC") -> tuple[DailySeries, HmmParams]:
    """Simulate a station record and return it with its generating parameters.

    ``missing_rate`` knocks out that fraction of days at random after
    simulation.
    """
    years = list(range(first_year, first_year + n_years))
    like = blank_series(season, years, station_id)
    if params is None:
        model = HmmModel.build(ModelSpec(family=family, season_terms=False, year_terms=False), n_years, like.max_days)
        params = constant_truth(model)
    rng = np.random.default_rng(seed)
    sim = simulate_series(params, like, rng)
    missing = ~like.in_season
    if missing_rate > 0:
        missing = missing | (rng.random(missing.shape) < missing_rate)
    return DailySeries(station_id, Season(season), years, sim.values, missing, like.day_count), params
