"""CSV ingestion, city-month join and gap repair for consumption/weather data.

Two input formats are supported, both UTF-8, comma separated, ISO-8601 dates::

    date,city,usage_m3
    date,city,mean_rh,max_rh,min_rh,mean_temp,max_temp,min_temp,
        max_abs_temp,min_abs_temp,rain_mm,freezing_days

Empty cells are read as missing and repaired later by ``interpolate_missing``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import DataError

log = logging.getLogger(__name__)

CONSUMPTION_HEADER = ("date", "city", "usage_m3")
WEATHER_FIELDS = (
    "mean_rh",
    "max_rh",
    "min_rh",
    "mean_temp",
    "max_temp",
    "min_temp",
    "max_abs_temp",
    "min_abs_temp",
    "rain_mm",
    "freezing_days",
)
WEATHER_HEADER = ("date", "city") + WEATHER_FIELDS
VALUE_COLUMNS = ("usage",) + WEATHER_FIELDS

# share of missing usage values above which a city is dropped instead of repaired
MAX_MISSING_USAGE_SHARE = 0.5


@dataclass(frozen=True)
class ConsumptionRecord:
    date: date
    city: str
    usage: Optional[float]


@dataclass(frozen=True)
class WeatherRecord:
    date: date
    city: str
    mean_rh: Optional[float]
    max_rh: Optional[float]
    min_rh: Optional[float]
    mean_temp: Optional[float]
    max_temp: Optional[float]
    min_temp: Optional[float]
    max_abs_temp: Optional[float]
    min_abs_temp: Optional[float]
    rain_mm: Optional[float]
    freezing_days: Optional[float]


@dataclass(frozen=True)
class MergedDataset:
    """Joined per-city monthly table.

    ``frame`` has columns ``city, date, usage`` followed by the ten weather
    fields, sorted by (city, date) with unique keys. Missing cells are NaN
    until :func:`interpolate_missing` has run.
    """

    frame: pd.DataFrame
    dropped: tuple[str, ...] = field(default_factory=tuple)

    @property
    def cities(self) -> list[str]:
        return sorted(self.frame["city"].unique().tolist())

    @property
    def date_range(self) -> tuple[date, date]:
        dates = self.frame["date"]
        return dates.min().date(), dates.max().date()

    @property
    def rows(self):
        return self.frame.itertuples(index=False)

    def __len__(self) -> int:
        return len(self.frame)


def _parse_date(text: str, row: int) -> date:
    text = text.strip()
    try:
        if len(text) == 7:  # YYYY-MM
            year, month = text.split("-")
            return date(int(year), int(month), 1)
        parsed = date.fromisoformat(text)
    except ValueError:
        raise DataError(f"row {row}: malformed date {text!r}") from None
    if parsed.day != 1:
        raise DataError(f"row {row}: day-of-month must be 1, got {text!r}")
    return parsed


def _parse_number(text: str, row: int, name: str) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: column {name} is not finite")
    return value


def _read_rows(path: str | Path, header: tuple[str, ...]):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        found = next(reader, None)
        if found is None or tuple(c.strip() for c in found) != header:
            raise DataError(f"{path}: row 1: expected header {','.join(header)}, got {found}")
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"{path}: row {lineno}: expected {len(header)} cells, got {len(cells)}"
                )
            yield lineno, cells


def parse_consumption_csv(path: str | Path) -> list[ConsumptionRecord]:
    """Read a ``date,city,usage_m3`` file; empty usage cells become ``None``."""
    records = []
    for row, cells in _read_rows(path, CONSUMPTION_HEADER):
        day = _parse_date(cells[0], row)
        city = cells[1].strip()
        if not city:
            raise DataError(f"row {row}: empty city")
        usage = _parse_number(cells[2], row, "usage_m3")
        if usage is not None and usage < 0:
            raise DataError(f"row {row}: negative usage {usage}")
        records.append(ConsumptionRecord(day, city, usage))
    return records


def _check_weather(values: dict, row: int) -> None:
    def ordered(lo: str, hi: str) -> None:
        a, b = values[lo], values[hi]
        if a is not None and b is not None and a > b:
            raise DataError(f"row {row}: {lo}={a} exceeds {hi}={b}")

    for name in ("mean_rh", "max_rh", "min_rh"):
        v = values[name]
        if v is not None and not 0 <= v <= 100:
            raise DataError(f"row {row}: {name}={v} outside 0..100")
    ordered("min_rh", "mean_rh")
    ordered("mean_rh", "max_rh")
    ordered("min_rh", "max_rh")
    ordered("min_temp", "mean_temp")
    ordered("mean_temp", "max_temp")
    ordered("min_temp", "max_temp")
    ordered("min_abs_temp", "min_temp")
    ordered("max_temp", "max_abs_temp")
    rain = values["rain_mm"]
    if rain is not None and rain < 0:
        raise DataError(f"row {row}: negative rain_mm {rain}")
    fd = values["freezing_days"]
    if fd is not None and (fd != int(fd) or not 0 <= fd <= 31):
        raise DataError(f"row {row}: freezing_days={fd} must be an integer in 0..31")


def parse_weather_csv(path: str | Path) -> list[WeatherRecord]:
    """Read a weather file and validate the per-row ordering invariants."""
    records = []
    for row, cells in _read_rows(path, WEATHER_HEADER):
        day = _parse_date(cells[0], row)
        city = cells[1].strip()
        if not city:
            raise DataError(f"row {row}: empty city")
        values = {
            name: _parse_number(text, row, name) for name, text in zip(WEATHER_FIELDS, cells[2:])
        }
        _check_weather(values, row)
        records.append(WeatherRecord(day, city, **values))
    return records


def _frame(records, columns: tuple[str, ...], source: str) -> pd.DataFrame:
    df = pd.DataFrame([[getattr(r, c) for c in columns] for r in records], columns=list(columns))
    dup = df.duplicated(subset=["city", "date"], keep=False)
    if dup.any():
        first = df.loc[dup].iloc[0]
        raise DataError(
            f"{source}: duplicate (city, date) entries, e.g. ({first['city']}, {first['date']})"
        )
    return df


def merge_by_city_month(
    consumption: list[ConsumptionRecord], weather: list[WeatherRecord]
) -> MergedDataset:
    """Inner-join consumption and weather on (city, month).

    Cities present in only one source are excluded and listed in
    ``MergedDataset.dropped``.
    """
    if not consumption or not weather:
        raise DataError("both consumption and weather inputs must be non-empty")
    cons = _frame(consumption, ("date", "city", "usage"), "consumption")
    wx = _frame(weather, ("date", "city") + WEATHER_FIELDS, "weather")

    dropped = []
    cons_cities, wx_cities = set(cons["city"]), set(wx["city"])
    for city in sorted(cons_cities - wx_cities):
        dropped.append(f"city {city}: present only in consumption data")
    for city in sorted(wx_cities - cons_cities):
        dropped.append(f"city {city}: present only in weather data")
    for msg in dropped:
        log.warning("dropped %s", msg)

    merged = cons.merge(wx, on=["city", "date"], how="inner")
    if merged.empty:
        raise DataError("joining consumption and weather produced zero rows")
    merged["date"] = pd.to_datetime(merged["date"])
    merged = merged[["city", "date"] + list(VALUE_COLUMNS)]
    merged[list(VALUE_COLUMNS)] = merged[list(VALUE_COLUMNS)].astype(float)
    merged = merged.sort_values(["city", "date"], kind="mergesort").reset_index(drop=True)
    return MergedDataset(merged, tuple(dropped))


def _fill_linear(values: np.ndarray) -> np.ndarray:
    """Linear interpolation over the month index, constant extension at the ends."""
    known = ~np.isnan(values)
    if known.all():
        return values
    idx = np.arange(len(values), dtype=float)
    out = values.copy()
    out[~known] = np.interp(idx[~known], idx[known], values[known])
    return out


def interpolate_missing(ds: MergedDataset) -> MergedDataset:
    """Repair gaps per city: reindex to a contiguous monthly grid and interpolate.

    Interior gaps are linearly interpolated between the nearest known
    neighbours of the same city and column; leading and trailing gaps take the
    nearest known value. Cities with more than half of their usage values
    missing are dropped with a warning.
    """
    parts = []
    dropped = list(ds.dropped)
    for city, group in ds.frame.groupby("city", sort=True):
        grid = pd.date_range(group["date"].min(), group["date"].max(), freq="MS")
        g = group.set_index("date").reindex(grid)
        g.index.name = "date"
        g["city"] = city
        for col in VALUE_COLUMNS:
            if g[col].isna().all():
                raise DataError(f"city {city}: column {col} is entirely missing")
        missing_share = g["usage"].isna().mean()
        if missing_share > MAX_MISSING_USAGE_SHARE:
            msg = f"city {city}: {missing_share:.0%} of usage values missing"
            log.warning("dropped %s", msg)
            dropped.append(msg)
            continue
        for col in VALUE_COLUMNS:
            n_missing = int(g[col].isna().sum())
            if n_missing:
                log.info("city %s: interpolated %d missing %s values", city, n_missing, col)
                g[col] = _fill_linear(g[col].to_numpy(dtype=float))
        parts.append(g.reset_index())
    if not parts:
        raise DataError("no city left after gap repair")
    frame = pd.concat(parts, ignore_index=True)[["city", "date"] + list(VALUE_COLUMNS)]
    return MergedDataset(frame, tuple(dropped))


def load_dataset(consumption_path: str | Path, weather_path: str | Path) -> MergedDataset:
    """Parse both files, join them and repair gaps."""
    merged = merge_by_city_month(
        parse_consumption_csv(consumption_path), parse_weather_csv(weather_path)
    )
    return interpolate_missing(merged)
