"""Feature engineering, reversible scaling, sequence windowing and splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import date

import numpy as np
import pandas as pd

from .dataset import WEATHER_FIELDS, MergedDataset
from .errors import DataError

TEMPORAL_FEATURES = ("month", "day", "day_of_week", "quarter")
FEATURE_NAMES = WEATHER_FIELDS + TEMPORAL_FEATURES + ("lag_usage",)

DEFAULT_WINDOW = 12
SCALER_MODES = ("minmax", "zscore")


def engineer_temporal_features(day: date) -> tuple[int, int, int, int]:
    """Return ``(month, day, day_of_week, quarter)``; Monday is 0."""
    return day.month, day.day, day.weekday(), (day.month - 1) // 3 + 1


def log_transform_target(usage):
    """``ln(1 + usage)``; works on scalars and arrays."""
    arr = np.asarray(usage, dtype=float)
    if np.any(arr < 0):
        raise DataError("log transform requires non-negative usage")
    out = np.log1p(arr)
    return float(out) if out.ndim == 0 else out


def inverse_log_transform(values):
    out = np.expm1(np.asarray(values, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FeatureTable:
    """Per-month feature rows, sorted by (city, date).

    ``target`` is raw usage until the table is passed through
    :func:`transform`, after which it holds the scaled log target and
    ``scaled`` is true. ``usage`` always keeps raw cubic meters.
    """

    city: np.ndarray
    date: np.ndarray
    X: np.ndarray
    target: np.ndarray
    usage: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    scaled: bool = False

    def __len__(self) -> int:
        return len(self.target)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "FeatureTable":
        return replace(
            self,
            city=self.city[mask],
            date=self.date[mask],
            X=self.X[mask],
            target=self.target[mask],
            usage=self.usage[mask],
        )

    def city_slices(self) -> list[tuple[str, int, int]]:
        """``(city, start, stop)`` for each contiguous city block."""
        out = []
        start = 0
        n = len(self.city)
        for i in range(1, n + 1):
            if i == n or self.city[i] != self.city[start]:
                out.append((str(self.city[start]), start, i))
                start = i
        return out


def _month_index(d) -> int:
    return d.year * 12 + d.month - 1


def add_lag_feature(ds: MergedDataset, lag: int = 1) -> FeatureTable:
    """Build feature rows: weather, calendar features and lagged usage.

    The first ``lag`` months of each city have no lagged value and are
    dropped.
    """
    if lag < 1:
        raise DataError(f"lag must be >= 1, got {lag}")
    frame = ds.frame
    if frame[["usage", *WEATHER_FIELDS]].isna().any().any():
        raise DataError("dataset still has missing values; run interpolate_missing first")

    cities, dates, rows, targets = [], [], [], []
    for city, g in frame.groupby("city", sort=True):
        g = g.sort_values("date")
        stamps = [ts.date() for ts in g["date"]]
        n = len(stamps)
        if lag >= n:
            raise DataError(f"city {city}: lag {lag} >= series length {n}")
        months = np.array([_month_index(d) for d in stamps])
        if np.any(np.diff(months) != 1):
            raise DataError(f"city {city}: months are not contiguous")
        weather = g[list(WEATHER_FIELDS)].to_numpy(dtype=float)
        usage = g["usage"].to_numpy(dtype=float)
        for k in range(lag, n):
            rows.append([*weather[k], *engineer_temporal_features(stamps[k]), usage[k - lag]])
            cities.append(city)
            dates.append(stamps[k])
            targets.append(usage[k])

    usage_arr = np.asarray(targets, dtype=float)
    return FeatureTable(
        city=np.asarray(cities, dtype=object),
        date=np.asarray(dates, dtype="datetime64[D]"),
        X=np.asarray(rows, dtype=float),
        target=usage_arr,
        usage=usage_arr.copy(),
    )


@dataclass(frozen=True)
class ScalerParams:
    """Fitted per-feature scaling state.

    For min-max, ``loc``/``spread`` hold (min, max); for z-score they hold
    (mean, std). Features listed in ``log_features`` pass through ``ln(1+x)``
    before scaling, and so does the target when ``target_log`` is set.
    """

    mode: str
    feature_names: tuple[str, ...]
    loc: np.ndarray
    spread: np.ndarray
    constant: np.ndarray
    target_log: bool
    target_loc: float
    target_spread: float
    log_features: tuple[str, ...] = ()

    def _scale(self) -> np.ndarray:
        if self.mode == "minmax":
            return self.spread - self.loc
        return self.spread

    def _target_scale(self) -> float:
        if self.mode == "minmax":
            return self.target_spread - self.target_loc
        return self.target_spread


def _stats(values: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    if mode == "minmax":
        return values.min(axis=0), values.max(axis=0)
    return values.mean(axis=0), values.std(axis=0)


def _log_mask(names: tuple[str, ...], log_features: tuple[str, ...]) -> np.ndarray:
    return np.array([n in log_features for n in names], dtype=bool)


def fit_scaler(
    table: FeatureTable,
    mode: str = "minmax",
    target_log: bool = True,
    log_features: tuple[str, ...] | None = None,
) -> ScalerParams:
    """Fit scaling statistics on training rows only.

    By default the lagged usage feature shares the target's log transform.
    Constant columns are flagged and later scale to 0.
    """
    if mode not in SCALER_MODES:
        raise DataError(f"unknown scaler mode {mode!r}")
    if len(table) < 2:
        raise DataError(f"need at least 2 rows to fit a scaler, got {len(table)}")
    if log_features is None:
        log_features = ("lag_usage",) if target_log and "lag_usage" in table.feature_names else ()
    X = np.array(table.X, dtype=float)
    mask = _log_mask(table.feature_names, log_features)
    X[:, mask] = log_transform_target(X[:, mask])
    loc, spread = _stats(X, mode)
    y = np.asarray(table.usage, dtype=float)
    if target_log:
        y = log_transform_target(y)
    t_loc, t_spread = _stats(y, mode)
    scale = spread - loc if mode == "minmax" else spread
    for arr in (loc, spread):
        arr.setflags(write=False)
    constant = scale == 0
    constant.setflags(write=False)
    return ScalerParams(
        mode=mode,
        feature_names=tuple(table.feature_names),
        loc=loc,
        spread=spread,
        constant=constant,
        target_log=target_log,
        target_loc=float(t_loc),
        target_spread=float(t_spread),
        log_features=tuple(log_features),
    )


def _check_names(params: ScalerParams, names) -> None:
    names = tuple(names)
    if names != params.feature_names:
        unknown = [n for n in names if n not in params.feature_names]
        raise DataError(
            f"feature names do not match fitted scaler (unknown: {unknown or 'ordering differs'})"
        )


def transform_features(params: ScalerParams, X: np.ndarray, names=None) -> np.ndarray:
    if names is not None:
        _check_names(params, names)
    X = np.array(X, dtype=float)
    mask = _log_mask(params.feature_names, params.log_features)
    X[..., mask] = np.log1p(X[..., mask])
    scale = params._scale()
    safe = np.where(params.constant, 1.0, scale)
    out = (X - params.loc) / safe
    out[..., params.constant] = 0.0
    return out


def inverse_features(params: ScalerParams, Z: np.ndarray) -> np.ndarray:
    """Undo :func:`transform_features`; constant columns come back as their fitted value."""
    Z = np.asarray(Z, dtype=float)
    X = Z * np.where(params.constant, 0.0, params._scale()) + params.loc
    mask = _log_mask(params.feature_names, params.log_features)
    X[..., mask] = np.expm1(X[..., mask])
    return X


def transform_target(params: ScalerParams, usage):
    y = np.asarray(usage, dtype=float)
    if params.target_log:
        y = log_transform_target(y)
    scale = params._target_scale()
    if scale == 0:
        return np.zeros_like(y, dtype=float)
    return (y - params.target_loc) / scale


def inverse_transform(params: ScalerParams, values):
    """Map scaled target values back to raw cubic meters."""
    y = np.asarray(values, dtype=float) * params._target_scale() + params.target_loc
    if params.target_log:
        y = np.expm1(y)
    return float(y) if y.ndim == 0 else y


def transform(params: ScalerParams, table: FeatureTable) -> FeatureTable:
    """Scale features and target with train-fitted parameters, no clipping."""
    if table.scaled:
        raise DataError("table is already scaled")
    return replace(
        table,
        X=transform_features(params, table.X, table.feature_names),
        target=np.asarray(transform_target(params, table.usage), dtype=float),
        scaled=True,
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    per_city: bool = True


def split_mask(table: FeatureTable, spec: SplitSpec) -> np.ndarray:
    """Boolean array marking training rows of a chronological split."""
    if not 0 < spec.train_fraction < 1:
        raise DataError(f"train fraction must lie in (0, 1), got {spec.train_fraction}")
    is_train = np.zeros(len(table), dtype=bool)
    if spec.per_city:
        for city, start, stop in table.city_slices():
            n_train = math.floor(spec.train_fraction * (stop - start))
            if n_train == 0 or n_train == stop - start:
                raise DataError(
                    f"city {city}: split of {stop - start} rows at {spec.train_fraction} "
                    "leaves an empty partition"
                )
            is_train[start : start + n_train] = True
    else:
        dates = np.unique(table.date)
        n_train = math.floor(spec.train_fraction * len(dates))
        if n_train == 0 or n_train == len(dates):
            raise DataError("split leaves an empty partition")
        is_train = table.date < dates[n_train]
        for city, start, stop in table.city_slices():
            chunk = is_train[start:stop]
            if chunk.all() or not chunk.any():
                raise DataError(f"city {city}: split leaves an empty partition")
    return is_train


def chronological_split(table: FeatureTable, spec: SplitSpec) -> tuple[FeatureTable, FeatureTable]:
    is_train = split_mask(table, spec)
    return table.subset(is_train), table.subset(~is_train)


@dataclass(frozen=True)
class WindowSet:
    """A batch of input windows with their one-step-ahead targets.

    ``inputs[k]`` holds ``L`` consecutive feature rows of one city and
    ``target[k]`` the target of the row right after them. ``row`` indexes the
    target row in the table the windows were cut from.
    """

    inputs: np.ndarray
    target: np.ndarray
    city: np.ndarray
    target_date: np.ndarray
    row: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    def take(self, idx) -> "WindowSet":
        return WindowSet(
            self.inputs[idx], self.target[idx], self.city[idx], self.target_date[idx], self.row[idx]
        )


def make_windows(table: FeatureTable, length: int, target_mask=None) -> WindowSet:
    """Cut sliding windows per city.

    A city with ``n`` rows yields ``n - length`` windows; window ``k`` covers
    rows ``k .. k+length-1`` and targets row ``k+length``. With
    ``target_mask``, only windows whose target row is flagged are kept (used
    to build test windows whose history reaches back into training rows).
    """
    if length < 1:
        raise DataError(f"window length must be >= 1, got {length}")
    slices = table.city_slices()
    if not any(stop - start > length for _, start, stop in slices):
        raise DataError(f"window length {length} leaves no window in any city")
    rows = []
    for _, start, stop in slices:
        for t in range(start + length, stop):
            if target_mask is None or target_mask[t]:
                rows.append(t)
    rows = np.asarray(rows, dtype=int)
    F = table.n_features
    if len(rows):
        offsets = np.arange(-length, 0)
        inputs = table.X[rows[:, None] + offsets[None, :]]
    else:
        inputs = np.empty((0, length, F))
    return WindowSet(
        inputs=np.ascontiguousarray(inputs, dtype=float),
        target=table.target[rows].astype(float),
        city=table.city[rows],
        target_date=table.date[rows],
        row=rows,
    )
