"""Station ingest for GHCN-Daily precipitation.

Reads ``.dly`` fixed-width files or a simple CSV, applies the quality
filter and trace handling, and cuts the record into one season window per
year. Values are tenths of mm on input and cm from :func:`seasonize` on.
"""

from __future__ import annotations

import calendar
import csv
import enum
import hashlib
import io
import json
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

logger = logging.getLogger(__name__)

MISSING_SENTINEL = -9999
DLY_LINE_LENGTH = 269
DEFAULT_CEILING_CM = 200.0


class ParseError(ValueError):
    """Malformed station file; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IngestError(ValueError):
    pass


class Season(str, enum.Enum):
    DJF = "DJF"
    MAM = "MAM"
    JJA = "JJA"
    SON = "SON"
    WET_NOV_APR = "WET_NOV_APR"


@dataclass(frozen=True)
class RawRecord:
    date: date
    prcp: int | None  # tenths of mm
    qflag: str | None = None
    mflag: str | None = None


def _flag(ch: str) -> str | None:
    ch = ch.strip()
    return ch or None


def _parse_dly(text: Iterable[str]) -> list[RawRecord]:
    records = []
    for lineno, line in enumerate(text, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if len(line) < 21:
            raise ParseError("line shorter than the record header", lineno)
        element = line[17:21]
        if element != "PRCP":
            continue
        line = line.ljust(DLY_LINE_LENGTH)
        if len(line) > DLY_LINE_LENGTH:
            raise ParseError(f"line longer than {DLY_LINE_LENGTH} characters", lineno)
        try:
            year = int(line[11:15])
            month = int(line[15:17])
        except ValueError:
            raise ParseError("bad year/month field", lineno) from None
        if not 1 <= month <= 12:
            raise ParseError(f"bad month {month}", lineno)
        ndays = calendar.monthrange(year, month)[1]
        for day in range(1, 32):
            off = 21 + (day - 1) * 8
            field = line[off:off + 5]
            try:
                value = int(field)
            except ValueError:
                raise ParseError(f"bad value field {field!r} for day {day}", lineno) from None
            if day > ndays:
                continue
            mflag, qflag = _flag(line[off + 5]), _flag(line[off + 6])
            if value == MISSING_SENTINEL:
                records.append(RawRecord(date(year, month, day), None, None, None))
                continue
            if value < 0:
                raise ParseError(f"negative precipitation {value} for day {day}", lineno)
            records.append(RawRecord(date(year, month, day), value, qflag, mflag))
    return records


def _parse_csv(text: Iterable[str]) -> list[RawRecord]:
    records = []
    for lineno, row in enumerate(csv.reader(text), start=1):
        if not row or not any(cell.strip() for cell in row):
            continue
        if lineno == 1 and row[0].strip().lower() == "date":
            continue
        if len(row) < 2:
            raise ParseError("expected date,prcp_tenths_mm[,mflag[,qflag]]", lineno)
        try:
            day = date.fromisoformat(row[0].strip())
        except ValueError:
            raise ParseError(f"bad date {row[0]!r}", lineno) from None
        cell = row[1].strip()
        mflag = _flag(row[2]) if len(row) > 2 else None
        qflag = _flag(row[3]) if len(row) > 3 else None
        if cell == "":
            records.append(RawRecord(day, None, qflag, mflag))
            continue
        try:
            value = int(cell)
        except ValueError:
            raise ParseError(f"bad precipitation value {cell!r}", lineno) from None
        if value == MISSING_SENTINEL:
            records.append(RawRecord(day, None, qflag, mflag))
        elif value < 0:
            raise ParseError(f"negative precipitation {value}", lineno)
        else:
            records.append(RawRecord(day, value, qflag, mflag))
    return records


def parse_station(stream: BinaryIO | bytes | str, format: str = "dly_fixed_width") -> list[RawRecord]:
    """Parse PRCP records from a ``.dly`` or CSV byte stream.

    ``format`` is ``"dly_fixed_width"`` or ``"csv"``. Non-PRCP elements in
    ``.dly`` files are skipped.
    """
    if isinstance(stream, (bytes, bytearray)):
        raw = bytes(stream)
    elif isinstance(stream, str):
        raw = stream.encode("ascii")
    else:
        raw = stream.read()
        if isinstance(raw, str):
            raw = raw.encode("ascii")
    try:
        text = io.StringIO(raw.decode("ascii"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"non-ASCII content: {exc}") from None
    if format == "dly_fixed_width":
        return _parse_dly(text)
    if format == "csv":
        return _parse_csv(text)
    raise ValueError(f"unknown station format {format!r}")


def read_station(path: str | Path, format: str | None = None) -> list[RawRecord]:
    path = Path(path)
    if format is None:
        format = "dly_fixed_width" if path.suffix.lower() == ".dly" else "csv"
    with open(path, "rb") as fh:
        return parse_station(fh, format)


def station_id_from_dly(path: str | Path) -> str:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", errors="replace")
    return first[:11].strip()


def apply_quality_filter(records: Iterable[RawRecord]) -> list[RawRecord]:
    """Drop values with any quality flag; zero out trace amounts.

    The quality check runs first, so a flagged trace value ends up missing.
    """
    out = []
    for rec in records:
        if rec.prcp is None:
            out.append(rec)
        elif rec.qflag:
            out.append(RawRecord(rec.date, None, rec.qflag, rec.mflag))
        elif rec.mflag == "T":
            out.append(RawRecord(rec.date, 0, rec.qflag, rec.mflag))
        else:
            out.append(rec)
    return out


def season_window(season: Season | str, year: int) -> tuple[date, date]:
    """Inclusive first and last calendar day of ``season`` labelled ``year``."""
    season = Season(season)
    if season is Season.DJF:
        start = date(year - 1, 12, 1)
        end = date(year, 3, 1) - timedelta(days=1)
    elif season is Season.MAM:
        start, end = date(year, 3, 1), date(year, 5, 31)
    elif season is Season.JJA:
        start, end = date(year, 6, 1), date(year, 8, 31)
    elif season is Season.SON:
        start, end = date(year, 9, 1), date(year, 11, 30)
    else:
        start, end = date(year - 1, 11, 1), date(year, 4, 30)
    return start, end


def season_length(season: Season | str, year: int) -> int:
    start, end = season_window(season, year)
    return (end - start).days + 1


@dataclass
class DailySeries:
    """Season-by-year precipitation (cm) with a missingness mask.

    ``values`` and ``missing`` are padded to ``(n_years, max_days)``. Padding
    beyond ``day_count[t]`` is marked missing and holds NaN, as do missing
    days.
    """

    station_id: str
    season: Season
    years: list[int]
    values: np.ndarray
    missing: np.ndarray
    day_count: np.ndarray

    def __post_init__(self):
        self.season = Season(self.season)
        self.years = [int(y) for y in self.years]
        self.values = np.asarray(self.values, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        self.day_count = np.asarray(self.day_count, dtype=np.int64)
        if self.values.shape != self.missing.shape or self.values.ndim != 2:
            raise ValueError("values and missing must be matching 2-D arrays")
        if len(self.years) != self.values.shape[0] or len(self.day_count) != len(self.years):
            raise ValueError("years, day_count and values disagree on the number of years")
        if any(b - a != 1 for a, b in zip(self.years, self.years[1:])):
            raise ValueError("year labels must be consecutive")
        if np.any(self.day_count > self.values.shape[1]):
            raise ValueError("day_count exceeds padded width")
        self.missing = self.missing | ~self.in_season
        obs = ~self.missing
        if np.any(~np.isfinite(self.values[obs])):
            raise ValueError("observed entries must be finite")
        if np.any(self.values[obs] < 0):
            raise ValueError("negative precipitation")
        self.values = np.where(obs, self.values, np.nan)

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    @property
    def max_days(self) -> int:
        return self.values.shape[1]

    @property
    def in_season(self) -> np.ndarray:
        return np.arange(self.max_days)[None, :] < self.day_count[:, None]

    @property
    def observed(self) -> np.ndarray:
        return ~self.missing

    def year_values(self, t: int) -> np.ndarray:
        return self.values[t, : self.day_count[t]]

    def missing_fraction_by_year(self) -> np.ndarray:
        miss = (self.missing & self.in_season).sum(axis=1)
        return miss / self.day_count

    def missing_fraction_by_day(self) -> np.ndarray:
        ins = self.in_season
        n = ins.sum(axis=0)
        miss = (self.missing & ins).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, miss / np.maximum(n, 1), 1.0)

    def max_observed(self) -> float:
        obs = self.values[self.observed]
        return float(obs.max()) if obs.size else float("inf")

    def date_of(self, t: int, s: int) -> date:
        start, _ = season_window(self.season, self.years[t])
        return start + timedelta(days=s)

    def flatten(self) -> list[tuple[date, float]]:
        """Observed (date, cm) pairs in calendar order."""
        out = []
        for t in range(self.n_years):
            for s in np.flatnonzero(self.observed[t]):
                out.append((self.date_of(t, int(s)), float(self.values[t, s])))
        return out

    def with_years_missing(self, years: Iterable[int]) -> "DailySeries":
        years = set(int(y) for y in years)
        missing = self.missing.copy()
        for t, y in enumerate(self.years):
            if y in years:
                missing[t] = True
        return DailySeries(self.station_id, self.season, self.years, self.values.copy(), missing, self.day_count.copy())

    def subset_years(self, first: int, last: int) -> "DailySeries":
        idx = [t for t, y in enumerate(self.years) if first <= y <= last]
        if not idx:
            raise ValueError(f"no years in [{first}, {last}]")
        sl = slice(idx[0], idx[-1] + 1)
        width = int(self.day_count[sl].max())
        return DailySeries(self.station_id, self.season, self.years[sl], self.values[sl, :width],
                           self.missing[sl, :width], self.day_count[sl])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.station_id, self.season.value, self.years]).encode())
        h.update(np.ascontiguousarray(self.missing).tobytes())
        h.update(np.nan_to_num(self.values, nan=-1.0).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        rows = []
        for t in range(self.n_years):
            n = int(self.day_count[t])
            rows.append([None if self.missing[t, s] else float(self.values[t, s]) for s in range(n)])
        return {
            "format": "precip_hmm.daily_series/1",
            "station_id": self.station_id,
            "season": self.season.value,
            "years": self.years,
            "day_count": [int(d) for d in self.day_count],
            "values_cm": rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DailySeries":
        day_count = np.asarray(d["day_count"], dtype=np.int64)
        width = int(day_count.max())
        values = np.full((len(d["years"]), width), np.nan)
        missing = np.ones_like(values, dtype=bool)
        for t, row in enumerate(d["values_cm"]):
            for s, v in enumerate(row):
                if v is not None:
                    values[t, s] = v
                    missing[t, s] = False
        return cls(d["station_id"], Season(d["season"]), d["years"], values, missing, day_count)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DailySeries":
        return cls.from_dict(json.loads(Path(path).read_text()))


def seasonize(records: Iterable[RawRecord], season: Season | str, year_range: tuple[int, int],
              station_id: str = "", ceiling_cm: float = DEFAULT_CEILING_CM) -> DailySeries:
    """Cut filtered records into per-year season windows.

    Season years are labelled by the year in which the window ends, so the
    DJF and Nov-Apr windows for ``y`` start in ``y - 1``. Days without a
    valid record are missing.
    """
    season = Season(season)
    first, last = int(year_range[0]), int(year_range[1])
    if last < first:
        raise ValueError(f"empty year range {year_range}")
    by_date: dict[date, int | None] = {}
    for rec in records:
        if rec.date in by_date and by_date[rec.date] != rec.prcp:
            raise IngestError(f"conflicting duplicate records for {rec.date}")
        by_date[rec.date] = rec.prcp

    years = list(range(first, last + 1))
    counts = np.array([season_length(season, y) for y in years], dtype=np.int64)
    values = np.full((len(years), counts.max()), np.nan)
    missing = np.ones(values.shape, dtype=bool)
    any_record = False
    for t, y in enumerate(years):
        start, _ = season_window(season, y)
        for s in range(counts[t]):
            d = start + timedelta(days=s)
            if d not in by_date:
                continue
            any_record = True
            v = by_date[d]
            if v is None:
                continue
            cm = v / 100.0
            if cm > ceiling_cm:
                raise IngestError(f"{d}: {cm} cm exceeds the {ceiling_cm} cm physical ceiling")
            values[t, s] = cm
            missing[t, s] = False
    if not any_record:
        raise IngestError(f"no records fall inside {season.value} windows for {first}-{last}")
    logger.info("seasonized %s %s %d-%d: %.1f%% missing", station_id, season.value, first, last,
                100 * (missing & (np.arange(values.shape[1]) < counts[:, None])).sum() / counts.sum())
    return DailySeries(station_id, season, years, values, missing, counts)


def load_series(path: str | Path, season: Season | str, year_range: tuple[int, int],
                format: str | None = None, station_id: str | None = None,
                ceiling_cm: float = DEFAULT_CEILING_CM) -> DailySeries:
    """Parse, filter and seasonize one station file."""
    path = Path(path)
    records = apply_quality_filter(read_station(path, format))
    if station_id is None:
        station_id = station_id_from_dly(path) if path.suffix.lower() == ".dly" else path.stem
    return seasonize(records, season, year_range, station_id=station_id, ceiling_cm=ceiling_cm)


def write_csv_records(records: Iterable[RawRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "prcp_tenths_mm", "mflag", "qflag"])
        for r in records:
            w.writerow([r.date.isoformat(), "" if r.prcp is None else r.prcp, r.mflag or "", r.qflag or ""])


def series_to_records(series: DailySeries) -> list[RawRecord]:
    """In-season days as records in tenths of mm; missing days carry no value."""
    out = []
    for t in range(series.n_years):
        for s in range(int(series.day_count[t])):
            v = None if series.missing[t, s] else int(round(series.values[t, s] * 100))
            out.append(RawRecord(series.date_of(t, s), v, None, None))
    return out
