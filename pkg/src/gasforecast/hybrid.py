"""Training pipeline for the recurrent forecasters and the averaged hybrid.

The hybrid pairs a bidirectional LSTM with a boosted-tree model trained on
the same feature rows, and predicts the mean of the two. Both branches are
trained and evaluated on exactly the same target months: a month is used
only if a full window of ``L`` preceding months exists for its city.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Optional

import numpy as np
import pandas as pd

from . import gbt
from .dataset import MergedDataset
from .errors import DataError
from .preprocess import (
    DEFAULT_WINDOW,
    FeatureTable,
    ScalerParams,
    SplitSpec,
    WindowSet,
    add_lag_feature,
    fit_scaler,
    inverse_transform,
    make_windows,
    split_mask,
    transform,
)
from .recurrent import RecurrentNetwork, TrainConfig, TrainHistory, train

MODEL_KINDS = ("lstm", "gru", "hybrid")
AVERAGING_SPACES = ("scaled_log", "raw")
_NETWORK_KIND = {"lstm": "lstm", "gru": "gru", "hybrid": "bilstm"}


@dataclass(frozen=True)
class NetworkSpec:
    hidden_size: int = 64
    num_layers: int = 2
    dropout: float = 0.2


@dataclass
class PreparedData:
    """Feature table plus everything derived from it for one split."""

    table: FeatureTable
    scaled: FeatureTable
    is_train: np.ndarray
    scaler: ScalerParams
    train_windows: WindowSet
    test_windows: WindowSet


def prepare(
    ds: MergedDataset,
    split: SplitSpec = SplitSpec(),
    window: int = DEFAULT_WINDOW,
    scaler_mode: str = "minmax",
    lag: int = 1,
    scaler: Optional[ScalerParams] = None,
) -> PreparedData:
    """Features -> lag -> chronological split -> scaling -> windows.

    The scaler is fitted on training rows unless one is supplied. Test
    windows may reach back into training months (actual history), so every
    test month gets a one-step-ahead prediction.
    """
    if window < 1:
        raise DataError(f"window length must be >= 1, got {window}")
    table = add_lag_feature(ds, lag)
    is_train = split_mask(table, split)
    for city, start, stop in table.city_slices():
        n_train = int(is_train[start:stop].sum())
        n_test = (stop - start) - n_train
        if n_train <= window + 1:
            raise DataError(
                f"city {city}: {n_train} training months, need more than window+1 = {window + 1}"
            )
        if n_test < window:
            raise DataError(
                f"city {city}: test partition of {n_test} months is shorter than the window ({window})"
            )
    if scaler is None:
        scaler = fit_scaler(table.subset(is_train), mode=scaler_mode)
    scaled = transform(scaler, table)
    # training windows never read test rows
    train_windows = make_windows(scaled.subset(is_train), window)
    train_windows = WindowSet(
        train_windows.inputs,
        train_windows.target,
        train_windows.city,
        train_windows.target_date,
        np.nonzero(is_train)[0][train_windows.row],
    )
    test_windows = make_windows(scaled, window, target_mask=~is_train)
    return PreparedData(table, scaled, is_train, scaler, train_windows, test_windows)


@dataclass
class ForecastModel:
    """A trained forecaster: recurrent branch, optional tree branch, scaling state."""

    kind: str
    network: RecurrentNetwork
    trees: Optional[gbt.GbtModel]
    scaler: ScalerParams
    window_length: int
    feature_names: tuple[str, ...]
    split: SplitSpec = SplitSpec()
    lag: int = 1
    averaging: str = "scaled_log"
    seed: int = 0
    history: TrainHistory = field(default_factory=TrainHistory)

    def branch_predictions(self, windows: WindowSet, scaled: FeatureTable) -> dict[str, np.ndarray]:
        """Scaled-log predictions per branch for the target rows of ``windows``."""
        out = {"neural": self.network.predict(windows.inputs)}
        if self.trees is not None:
            out["trees"] = self.trees.predict(scaled.X[windows.row])
        return out

    def combine(self, branches: dict[str, np.ndarray]) -> np.ndarray:
        """Raw-unit forecast from branch outputs, clamped at zero."""
        if self.trees is None:
            raw = inverse_transform(self.scaler, branches["neural"])
        elif self.averaging == "scaled_log":
            raw = inverse_transform(self.scaler, average_predictions(branches["neural"], branches["trees"]))
        else:
            raw = average_predictions(
                inverse_transform(self.scaler, branches["neural"]),
                inverse_transform(self.scaler, branches["trees"]),
            )
        return np.maximum(np.asarray(raw, dtype=float), 0.0)


HybridModel = ForecastModel


def average_predictions(a, b):
    """Equal-weight mean of two prediction arrays."""
    return (np.asarray(a, dtype=float) + np.asarray(b, dtype=float)) / 2.0


def fit_forecaster(
    ds: MergedDataset,
    kind: str = "hybrid",
    split: SplitSpec = SplitSpec(),
    train_cfg: TrainConfig = TrainConfig(),
    tree_params: gbt.GbtParams = gbt.GbtParams(),
    window: int = DEFAULT_WINDOW,
    seed: int = 0,
    network: NetworkSpec = NetworkSpec(),
    scaler_mode: str = "minmax",
    averaging: str = "scaled_log",
    prepared: Optional[PreparedData] = None,
) -> ForecastModel:
    """Fit an ``lstm``, ``gru`` or ``hybrid`` forecaster end to end.

    ``seed`` drives weight initialisation, batch shuffling and dropout; it
    overrides ``train_cfg.seed``.
    """
    if kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    if averaging not in AVERAGING_SPACES:
        raise DataError(f"unknown averaging space {averaging!r}")
    data = prepared or prepare(ds, split, window, scaler_mode)
    tw = data.train_windows
    net = RecurrentNetwork.build(
        _NETWORK_KIND[kind],
        data.scaled.n_features,
        hidden_size=network.hidden_size,
        num_layers=network.num_layers,
        dropout=network.dropout,
        seed=seed,
    )
    cfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
    net, history = train(net, tw.inputs, tw.target, cfg)
    trees = None
    if kind == "hybrid":
        trees = gbt.fit(
            data.scaled.X[tw.row],
            data.scaled.target[tw.row],
            tree_params,
            feature_names=data.scaled.feature_names,
            seed=seed,
        )
    return ForecastModel(
        kind=kind,
        network=net,
        trees=trees,
        scaler=data.scaler,
        window_length=window,
        feature_names=data.scaled.feature_names,
        split=split,
        averaging=averaging,
        seed=seed,
        history=history,
    )


def fit_hybrid(
    ds: MergedDataset,
    split: SplitSpec = SplitSpec(),
    train_cfg: TrainConfig = TrainConfig(),
    tree_params: gbt.GbtParams = gbt.GbtParams(),
    window: int = DEFAULT_WINDOW,
    seed: int = 0,
    **kwargs,
) -> ForecastModel:
    return fit_forecaster(ds, "hybrid", split, train_cfg, tree_params, window, seed, **kwargs)


def prepare_for(model: ForecastModel, ds: MergedDataset) -> PreparedData:
    """Rebuild features/windows for ``ds`` using the model's own scaler and split."""
    data = prepare(ds, model.split, model.window_length, model.scaler.mode, model.lag, model.scaler)
    if data.scaled.feature_names != model.feature_names:
        raise DataError("dataset features do not match the model's feature list")
    return data


def prediction_frame(model: ForecastModel, data: PreparedData, branches: bool = False) -> pd.DataFrame:
    """Raw-unit one-step-ahead predictions for all train and test target months.

    Columns ``city, date, split, model, actual, predicted``. With
    ``branches`` the hybrid's two components are reported as extra models.
    """
    parts = []
    for split_name, win in (("train", data.train_windows), ("test", data.test_windows)):
        br = model.branch_predictions(win, data.scaled)
        series = {model.kind: model.combine(br)}
        if branches and model.trees is not None:
            series[f"{model.kind}.bilstm"] = np.maximum(inverse_transform(model.scaler, br["neural"]), 0.0)
            series[f"{model.kind}.gbt"] = np.maximum(inverse_transform(model.scaler, br["trees"]), 0.0)
        for name, pred in series.items():
            parts.append(
                pd.DataFrame(
                    {
                        "city": win.city.astype(str),
                        "date": pd.to_datetime(win.target_date).strftime("%Y-%m-%d"),
                        "split": split_name,
                        "model": name,
                        "actual": data.table.usage[win.row],
                        "predicted": np.asarray(pred, dtype=float),
                    }
                )
            )
    return pd.concat(parts, ignore_index=True)


def predict_hybrid(model: ForecastModel, ds: MergedDataset, city: str, target_date: date) -> float:
    """Raw-unit forecast for one city-month using the preceding ``L`` months.

    The target month must be present in ``ds`` (its weather feeds the tree
    branch); its own usage value is never read.
    """
    table = add_lag_feature(ds, model.lag)
    if tuple(table.feature_names) != model.feature_names:
        raise DataError("dataset features do not match the model's feature list")
    slices = {c: (s, e) for c, s, e in table.city_slices()}
    if city not in slices:
        raise DataError(f"unknown city {city!r}")
    start, stop = slices[city]
    target = np.datetime64(target_date, "D")
    hits = np.nonzero(table.date[start:stop] == target)[0]
    if len(hits) == 0:
        raise DataError(f"city {city}: no feature row for {target_date}")
    row = start + int(hits[0])
    if row - model.window_length < start:
        raise DataError(
            f"city {city}: {target_date} lacks {model.window_length} months of preceding history"
        )
    scaled = transform(model.scaler, table)
    win = WindowSet(
        inputs=scaled.X[row - model.window_length : row][None],
        target=scaled.target[row : row + 1],
        city=scaled.city[row : row + 1],
        target_date=scaled.date[row : row + 1],
        row=np.array([row]),
    )
    return float(model.combine(model.branch_predictions(win, scaled))[0])
