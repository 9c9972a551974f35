"""JSON model files: named tensors with explicit shapes, tree node arrays, scaler state.

Floats are written with ``repr`` precision, so a save/load round trip
reproduces predictions bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import gbt
from .errors import ModelFileError
from .hybrid import ForecastModel
from .preprocess import ScalerParams, SplitSpec
from .recurrent import (
    GruCellParams,
    LstmCellParams,
    RecurrentLayer,
    RecurrentNetwork,
    TrainHistory,
)

SCHEMA_VERSION = 1
_TREE_FIELDS = ("feature", "threshold", "left", "right", "gain", "value")


def _tensor(name: str, arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"name": name, "shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _array(entry: dict) -> np.ndarray:
    data = np.asarray(entry["data"], dtype=float)
    return data.reshape(entry["shape"])


def _scaler_to_dict(s: ScalerParams) -> dict:
    return {
        "mode": s.mode,
        "feature_names": list(s.feature_names),
        "loc": s.loc.tolist(),
        "spread": s.spread.tolist(),
        "constant": s.constant.tolist(),
        "target_log": s.target_log,
        "target_loc": s.target_loc,
        "target_spread": s.target_spread,
        "log_features": list(s.log_features),
    }


def _scaler_from_dict(d: dict) -> ScalerParams:
    arrays = {}
    for key, dtype in (("loc", float), ("spread", float), ("constant", bool)):
        a = np.asarray(d[key], dtype=dtype)
        a.setflags(write=False)
        arrays[key] = a
    return ScalerParams(
        mode=d["mode"],
        feature_names=tuple(d["feature_names"]),
        target_log=bool(d["target_log"]),
        target_loc=float(d["target_loc"]),
        target_spread=float(d["target_spread"]),
        log_features=tuple(d["log_features"]),
        **arrays,
    )


def _network_to_dict(net: RecurrentNetwork) -> dict:
    return {
        "seed": net.seed,
        "layers": [
            {"kind": layer.kind, "dropout": layer.dropout, "hidden_size": layer.hidden_size}
            for layer in net.layers
        ],
        "tensors": [_tensor(name, arr) for name, arr in net.parameters().items()],
    }


def _network_from_dict(d: dict) -> RecurrentNetwork:
    tensors = {t["name"]: _array(t) for t in d["tensors"]}
    layers = []
    for k, spec in enumerate(d["layers"]):
        cls = GruCellParams if spec["kind"] == "gru" else LstmCellParams
        dirs = ("fwd", "bwd") if spec["kind"] == "bilstm" else ("fwd",)
        cells = [
            cls(*(tensors[f"layers.{k}.{direction}.{n}"] for n in ("W", "U", "b")))
            for direction in dirs
        ]
        layers.append(RecurrentLayer(spec["kind"], cells, float(spec["dropout"])))
    return RecurrentNetwork(layers, tensors["head.W"], tensors["head.b"], int(d["seed"]))


def _trees_to_dict(m: gbt.GbtModel) -> dict:
    p = m.params
    return {
        "params": {
            "n_trees": p.n_trees,
            "max_depth": p.max_depth,
            "learning_rate": p.learning_rate,
            "reg_lambda": p.reg_lambda,
            "gamma": p.gamma,
            "min_child_weight": p.min_child_weight,
            "base_score": p.base_score,
        },
        "base_score": m.base_score,
        "learning_rate": p.learning_rate,
        "feature_names": list(m.feature_names),
        "importance": m.importance,
        "seed": m.seed,
        "trees": [{f: getattr(t, f).tolist() for f in _TREE_FIELDS} for t in m.trees],
    }


def _trees_from_dict(d: dict) -> gbt.GbtModel:
    trees = [
        gbt.RegressionTree(
            **{
                f: np.asarray(t[f], dtype=int if f in ("feature", "left", "right") else float)
                for f in _TREE_FIELDS
            }
        )
        for t in d["trees"]
    ]
    return gbt.GbtModel(
        params=gbt.GbtParams(**d["params"]),
        base_score=float(d["base_score"]),
        trees=trees,
        feature_names=tuple(d["feature_names"]),
        importance={k: float(v) for k, v in d["importance"].items()},
        seed=int(d["seed"]),
    )


def model_to_dict(model: ForecastModel, config: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "window_length": model.window_length,
        "lag": model.lag,
        "averaging": model.averaging,
        "split": {"train_fraction": model.split.train_fraction, "per_city": model.split.per_city},
        "feature_names": list(model.feature_names),
        "scaler": _scaler_to_dict(model.scaler),
        "network": _network_to_dict(model.network),
        "trees": None if model.trees is None else _trees_to_dict(model.trees),
        "history": {
            "batch_loss": model.history.batch_loss,
            "train_loss": model.history.train_loss,
            "val_loss": model.history.val_loss,
        },
        "config": config or {},
    }


def model_from_dict(d: dict) -> ForecastModel:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFileError(
            f"model file schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        h = d["history"]
        return ForecastModel(
            kind=d["kind"],
            network=_network_from_dict(d["network"]),
            trees=None if d["trees"] is None else _trees_from_dict(d["trees"]),
            scaler=_scaler_from_dict(d["scaler"]),
            window_length=int(d["window_length"]),
            feature_names=tuple(d["feature_names"]),
            split=SplitSpec(float(d["split"]["train_fraction"]), bool(d["split"]["per_city"])),
            lag=int(d["lag"]),
            averaging=d["averaging"],
            seed=int(d["seed"]),
            history=TrainHistory(list(h["batch_loss"]), list(h["train_loss"]), list(h["val_loss"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"corrupted model file: {exc!r}") from exc


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file so a failure never leaves a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: ForecastModel, path, config: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model, config), indent=1) + "\n")


def load_model(path) -> ForecastModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"{path}: no such model file")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupted model file ({exc})") from exc
    if not isinstance(d, dict):
        raise ModelFileError(f"{path}: corrupted model file (not an object)")
    return model_from_dict(d)


def load_config(path) -> dict:
    """The config echo stored alongside a model."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return d.get("config", {})
