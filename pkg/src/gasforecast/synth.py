"""Seeded synthetic consumption/weather data for desk-scale experiments.

Temperature follows a yearly sinusoid shifted down with altitude; freezing
days come from sub-zero daily minima; usage is a base load plus a heating
term. With ``driver="freezing_days"`` usage depends on freezing days only,
with one base load shared by all cities.
"""

from __future__ import annotations

import calendar
import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from .dataset import CONSUMPTION_HEADER, WEATHER_HEADER
from .errors import DataError

DRIVERS = ("temperature", "freezing_days")


@dataclass(frozen=True)
class SynthScenario:
    cities: int = 5
    months: int = 72
    start: date = date(2017, 1, 1)
    driver: str = "temperature"
    noise: float = 0.05
    missing_rate: float = 0.0

    def validate(self) -> None:
        if self.months < 24:
            raise DataError(f"need at least 24 months, got {self.months}")
        if self.cities < 1:
            raise DataError("need at least one city")
        if self.driver not in DRIVERS:
            raise DataError(f"unknown driver {self.driver!r}; choose from {DRIVERS}")
        if not 0 <= self.missing_rate < 0.5:
            raise DataError("missing_rate must lie in [0, 0.5)")


def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _add_months(d: date, k: int) -> date:
    m = d.year * 12 + d.month - 1 + k
    return date(m // 12, m % 12 + 1, 1)


def generate(scenario: SynthScenario, seed: int = 0):
    """Return ``(consumption_rows, weather_rows)`` as lists of string cells."""
    scenario.validate()
    rng = np.random.default_rng(seed)
    cons_rows, wx_rows = [], []
    for c in range(scenario.cities):
        city = f"city{c + 1:02d}"
        altitude = rng.uniform(1200.0, 1700.0)
        base = rng.uniform(0.8e6, 6.0e6)
        heating = rng.uniform(0.12, 0.2)
        offset = -6.5 * (altitude - 1000.0) / 1000.0
        for k in range(scenario.months):
            day = _add_months(scenario.start, k)
            season = -math.cos(2.0 * math.pi * (day.month - 1) / 12.0)  # -1 in January
            mean_t = 12.5 + offset + 13.0 * season + rng.normal(0.0, 1.5)
            max_t = mean_t + 6.0 + abs(rng.normal(0.0, 1.0))
            min_t = mean_t - 6.0 - abs(rng.normal(0.0, 1.0))
            max_abs = max_t + 4.0 + abs(rng.normal(0.0, 2.0))
            min_abs = min_t - 4.0 - abs(rng.normal(0.0, 2.0))
            n_days = calendar.monthrange(day.year, day.month)[1]
            freezing = int(rng.binomial(n_days, _normal_cdf(-min_t / 4.0)))
            mean_rh = float(np.clip(55.0 - 15.0 * season + rng.normal(0.0, 5.0), 15.0, 90.0))
            max_rh = min(100.0, mean_rh + rng.uniform(8.0, 20.0))
            min_rh = max(0.0, mean_rh - rng.uniform(8.0, 20.0))
            rain = rng.gamma(2.0, (30.0 - 20.0 * season) / 2.0)
            shock = math.exp(rng.normal(0.0, scenario.noise))
            if scenario.driver == "temperature":
                usage = base * (1.0 + heating * max(0.0, 18.0 - mean_t)) * shock
            else:
                usage = 2.0e6 * (1.0 + 0.15 * freezing) * shock
            blank = 0 < k < scenario.months - 1 and rng.random() < scenario.missing_rate
            iso = day.isoformat()
            cons_rows.append([iso, city, "" if blank else f"{usage:.0f}"])
            wx_rows.append(
                [iso, city]
                + [f"{v:.1f}" for v in (mean_rh, max_rh, min_rh, mean_t, max_t, min_t, max_abs, min_abs, rain)]
                + [str(freezing)]
            )
    return cons_rows, wx_rows


def write_csvs(out_dir, scenario: SynthScenario, seed: int = 0) -> tuple[Path, Path]:
    """Write ``consumption.csv`` and ``weather.csv`` into ``out_dir``."""
    cons_rows, wx_rows = generate(scenario, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = (out / "consumption.csv", out / "weather.csv")
    for path, header, rows in zip(paths, (CONSUMPTION_HEADER, WEATHER_HEADER), (cons_rows, wx_rows)):
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return paths
