"""Run configuration read from TOML.

A minimal file names only the data path, the season and the output
directory; everything else defaults to the full-scale analysis settings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .ghcn import Season
from .inference import ChainConfig
from .model import ModelSpec
from .trend import DEFAULT_PERIODS, METRICS


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    format: str = ""  # dly_fixed_width | csv | empty to infer from the suffix
    station_id: str = ""
    season: str = "JJA"
    first_year: int = 1900
    last_year: int = 2021


@dataclass
class AssessConfig:
    n_simulations: int = 0  # 0 means one per posterior draw
    cutoff: float = 0.3
    omit_fraction: float = 0.25
    max_qq_points: int = 1000


@dataclass
class Variant:
    label: str
    family: str = "gamma"
    year_terms: bool = True


DEFAULT_VARIANTS = (Variant("gamma, no yearly trend", "gamma", False), Variant("gamma, yearly trend", "gamma", True),
                    Variant("GPD, yearly trend", "gpd", True))


@dataclass
class CrossvalConfig:
    held_years: list = field(default_factory=lambda: list(range(1910, 2021, 10)))
    variants: list = field(default_factory=lambda: [Variant(**asdict(v)) for v in DEFAULT_VARIANTS])
    # overrides applied to the main chain settings for the cross-validation fits
    chains: dict = field(default_factory=dict)


@dataclass
class TrendConfig:
    periods: list = field(default_factory=lambda: [list(p) for p in DEFAULT_PERIODS])
    metrics: list = field(default_factory=list)  # empty: chosen by season
    k: int = 40
    cutoff: float = 0.3
    n_imputations: int = 0  # 0 means one per posterior draw
    n_simulations: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    chains: ChainConfig = field(default_factory=ChainConfig)
    assess: AssessConfig = field(default_factory=AssessConfig)
    crossval: CrossvalConfig = field(default_factory=CrossvalConfig)
    trend: TrendConfig = field(default_factory=TrendConfig)
    output: str = "output"
    seed: int = 1
    workers: int = 1

    def trend_metrics(self) -> list[str]:
        if self.trend.metrics:
            return list(self.trend.metrics)
        if Season(self.data.season) is Season.WET_NOV_APR:
            return ["wet_spell_count", "mean_wet_spell_precip", "max_kday_precip"]
        return ["mean_dsl", "intensity"]

    def validate(self) -> None:
        try:
            Season(self.data.season)
        except ValueError:
            raise ConfigError(f"unknown season {self.data.season!r}") from None
        if not self.data.path:
            raise ConfigError("data.path is required")
        if self.data.format not in ("", "dly_fixed_width", "csv"):
            raise ConfigError(f"unknown data.format {self.data.format!r}")
        if self.data.last_year < self.data.first_year:
            raise ConfigError("data.last_year precedes data.first_year")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for m in self.trend.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown trend metric {m!r}")
        for p in self.trend.periods:
            if len(p) != 2 or p[1] < p[0]:
                raise ConfigError(f"bad trend period {p!r}")
        if not 0 <= self.assess.omit_fraction <= 1:
            raise ConfigError("assess.omit_fraction must be in [0, 1]")
        for v in self.crossval.variants:
            if v.family not in ("gamma", "gpd"):
                raise ConfigError(f"unknown family {v.family!r} in variant {v.label!r}")
        try:
            ChainConfig(**{**asdict(self.chains), **self.crossval.chains})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"crossval.chains: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crossval"]["variants"] = [asdict(v) for v in self.crossval.variants]
        return d


def _build(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    top = {"output", "seed", "workers"}
    sections = {"data": DataConfig, "model": ModelSpec, "chains": ChainConfig, "assess": AssessConfig,
                "trend": TrendConfig}
    unknown = set(d) - top - set(sections) - {"crossval"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw = {k: d[k] for k in top if k in d}
    for name, cls in sections.items():
        if name in d:
            kw[name] = _build(cls, d[name], name)
    if "crossval" in d:
        cv = dict(d["crossval"])
        if "variants" in cv:
            cv["variants"] = [_build(Variant, v, "crossval.variants") for v in cv["variants"]]
        kw["crossval"] = _build(CrossvalConfig, cv, "crossval")
    cfg = RunConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        d = tomli.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = from_dict(d)
    # relative data and output paths are taken relative to the config file
    if cfg.data.path and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str((path.parent / cfg.data.path).resolve())
    if not Path(cfg.output).is_absolute():
        cfg.output = str((path.parent / cfg.output).resolve())
    return cfg


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg))
