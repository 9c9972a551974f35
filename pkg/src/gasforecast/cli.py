"""Command-line entry point: ``gasforecast <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from . import gbt
from .dataset import load_dataset
from .errors import DataError, NumericError
from .hybrid import (
    AVERAGING_SPACES,
    MODEL_KINDS,
    NetworkSpec,
    fit_forecaster,
    predict_hybrid,
    prediction_frame,
    prepare,
    prepare_for,
)
from .metrics import evaluate
from .modelfile import atomic_write_text, load_model, save_model
from .preprocess import SCALER_MODES, SplitSpec
from .recurrent import RecurrentNetwork, TrainConfig, gradient_check
from .synth import DRIVERS, SynthScenario, write_csvs

log = logging.getLogger("gasforecast")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

# RunConfig fields that describe where things live rather than what was trained
PATH_FIELDS = ("consumption", "weather", "model_file", "out", "grid")


@dataclass
class RunConfig:
    consumption: str | None = None
    weather: str | None = None
    model_file: str | None = None
    out: str = "out"
    grid: str | None = None
    model: str = "hybrid"
    seed: int = 0
    split: float = 0.8
    window: int = 12
    epochs: int = 500
    batch: int = 32
    lr: float = 1e-3
    clip_norm: float = 5.0
    hidden: int = 64
    layers: int = 2
    dropout: float = 0.2
    scaler: str = "minmax"
    averaging: str = "scaled_log"
    n_trees: int = 200
    max_depth: int = 4
    eta: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        return cls(**{f.name: getattr(args, f.name) for f in fields(cls) if hasattr(args, f.name)})

    def resolved_model_file(self) -> Path:
        return Path(self.model_file) if self.model_file else Path(self.out) / "model.json"

    def hyperparameters(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in PATH_FIELDS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_data_flags(p):
    p.add_argument("--consumption", help="consumption CSV (date,city,usage_m3)")
    p.add_argument("--weather", help="weather CSV")


def _add_training_flags(p):
    d = RunConfig()
    p.add_argument("--model", choices=MODEL_KINDS, default=d.model)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--split", type=float, default=d.split, help="training fraction per city")
    p.add_argument("--window", type=int, default=d.window, help="window length in months")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch", type=int, default=d.batch)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=d.clip_norm)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--layers", type=int, default=d.layers)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--scaler", choices=SCALER_MODES, default=d.scaler)
    p.add_argument("--averaging", choices=AVERAGING_SPACES, default=d.averaging)
    p.add_argument("--n-trees", dest="n_trees", type=int, default=d.n_trees)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=d.max_depth)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=d.reg_lambda)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--min-child-weight", dest="min_child_weight", type=float, default=d.min_child_weight)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gasforecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse, join and repair the input CSVs")
    _add_data_flags(p)
    p.add_argument("--out", default="out")

    p = sub.add_parser("train", help="train a model (or sweep a grid)")
    _add_data_flags(p)
    p.add_argument("--model-file", dest="model_file")
    p.add_argument("--out", default="out")
    p.add_argument("--grid", help="CSV of hyperparameter rows to sweep")
    _add_training_flags(p)

    p = sub.add_parser("evaluate", help="per-city train/test RMSE, MAPE, MPE")
    _add_data_flags(p)
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--branches", action="store_true", help="also score the hybrid's two branches")

    p = sub.add_parser("predict", help="one-step-ahead usage for a city and month")
    _add_data_flags(p)
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--city", required=True)
    p.add_argument("--date", required=True, help="target month, YYYY-MM or YYYY-MM-01")

    p = sub.add_parser("importance", help="gain-share feature ranking of the tree branch")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--out", default="out")

    p = sub.add_parser("synth", help="write a seeded synthetic consumption/weather pair")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cities", type=int, default=5)
    p.add_argument("--months", type=int, default=72)
    p.add_argument("--start", default="2017-01", help="first month, YYYY-MM")
    p.add_argument("--driver", choices=DRIVERS, default="temperature")
    p.add_argument("--noise", type=float, default=0.05, help="log-normal usage noise sigma")
    p.add_argument("--missing-rate", dest="missing_rate", type=float, default=0.0)

    p = sub.add_parser("gradcheck", help="finite-difference check of the BPTT gradients")
    p.add_argument("--cell", choices=("lstm", "gru", "bilstm", "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _need_data(args) -> None:
    if not args.consumption or not args.weather:
        raise DataError("--consumption and --weather are required")


def _parse_month(text: str) -> date:
    try:
        if len(text) == 7:
            y, m = text.split("-")
            return date(int(y), int(m), 1)
        d = date.fromisoformat(text)
    except ValueError:
        raise DataError(f"malformed date {text!r}") from None
    if d.day != 1:
        raise DataError(f"target date must be the first of a month, got {text}")
    return d


def _csv_text(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    return buf.getvalue()


def _fit(cfg: RunConfig, ds, data=None):
    return fit_forecaster(
        ds,
        kind=cfg.model,
        split=SplitSpec(cfg.split),
        train_cfg=TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch, learning_rate=cfg.lr, clip_norm=cfg.clip_norm
        ),
        tree_params=gbt.GbtParams(
            n_trees=cfg.n_trees,
            max_depth=cfg.max_depth,
            learning_rate=cfg.eta,
            reg_lambda=cfg.reg_lambda,
            gamma=cfg.gamma,
            min_child_weight=cfg.min_child_weight,
        ),
        window=cfg.window,
        seed=cfg.seed,
        network=NetworkSpec(cfg.hidden, cfg.layers, cfg.dropout),
        scaler_mode=cfg.scaler,
        averaging=cfg.averaging,
        prepared=data,
    )


def _history_csv(history) -> str:
    rows = [
        [e + 1, b, t, float(np.sqrt(t))]
        for e, (b, t) in enumerate(zip(history.batch_loss, history.train_loss))
    ]
    return _csv_text(pd.DataFrame(rows, columns=["epoch", "batch_loss", "train_loss", "train_rmse"]))


def cmd_ingest(args) -> int:
    _need_data(args)
    ds = load_dataset(args.consumption, args.weather)
    out = Path(args.out)
    frame = ds.frame.assign(date=ds.frame["date"].dt.strftime("%Y-%m-%d"))
    atomic_write_text(out / "merged.csv", _csv_text(frame))
    lo, hi = ds.date_range
    print(f"{len(ds)} rows, {len(ds.cities)} cities, {lo} .. {hi}")
    for msg in ds.dropped:
        print(f"dropped {msg}", file=sys.stderr)
    return 0


def _read_grid(path) -> list[dict]:
    valid = {f.name: f.type for f in fields(RunConfig) if f.name not in PATH_FIELDS + ("seed",)}
    defaults = RunConfig()
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            parsed = {}
            for key, text in row.items():
                name = key.strip().replace("-", "_")
                if name not in valid:
                    raise DataError(f"{path}: unknown grid column {key!r}")
                kind = type(getattr(defaults, name))
                try:
                    parsed[name] = kind(text.strip())
                except ValueError:
                    raise DataError(f"{path}: row {lineno}: bad value {text!r} for {name}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: grid has no rows")
    return rows


def _run_grid(cfg: RunConfig, ds) -> int:
    grid = _read_grid(cfg.grid)
    out = Path(cfg.out)
    results = []
    for i, overrides in enumerate(grid):
        row_cfg = replace(cfg, **overrides, seed=cfg.seed + i, grid=None)
        model = _fit(row_cfg, ds)
        data = prepare_for(model, ds)
        report = evaluate(prediction_frame(model, data))
        save_model(model, out / "grid" / f"model_{i:03d}.json", row_cfg.hyperparameters())
        results.append(
            {
                "row": i,
                **overrides,
                "seed": row_cfg.seed,
                "mean_test_rmse": report.mean(model.kind, "test", "rmse"),
                "mean_test_mape_pct": report.mean(model.kind, "test", "mape_pct"),
            }
        )
        log.info("grid row %d: mean test RMSE %.6g", i, results[-1]["mean_test_rmse"])
    table = pd.DataFrame(results).sort_values(["mean_test_rmse", "row"], kind="mergesort")
    atomic_write_text(out / "grid_results.csv", _csv_text(table))
    print(table.to_string(index=False))
    return 0


def cmd_train(args) -> int:
    _need_data(args)
    cfg = RunConfig.from_args(args)
    ds = load_dataset(cfg.consumption, cfg.weather)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", json.dumps(asdict(cfg), indent=2) + "\n")
    if cfg.grid:
        return _run_grid(cfg, ds)
    model = _fit(cfg, ds)
    atomic_write_text(out / "history.csv", _history_csv(model.history))
    path = cfg.resolved_model_file()
    save_model(model, path, cfg.hyperparameters())
    print(f"wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    _need_data(args)
    model = load_model(args.model_file)
    ds = load_dataset(args.consumption, args.weather)
    data = prepare_for(model, ds)
    preds = prediction_frame(model, data, branches=args.branches)
    report = evaluate(preds)
    out = Path(args.out)
    text = report.to_text()
    buf = io.StringIO()
    report.to_csv(buf)
    atomic_write_text(out / "report.csv", buf.getvalue())
    atomic_write_text(out / "report.txt", text + "\n")
    atomic_write_text(out / "predictions.csv", _csv_text(preds))
    tw = data.train_windows
    resid = model.network.predict(tw.inputs) - tw.target
    log.info(
        "recurrent branch train RMSE (scaled-log) %.10g; final training epoch %.10g",
        float(np.sqrt(np.mean(resid * resid))),
        float(np.sqrt(model.history.train_loss[-1])) if model.history.train_loss else float("nan"),
    )
    print(text)
    return 0


def cmd_predict(args) -> int:
    _need_data(args)
    model = load_model(args.model_file)
    ds = load_dataset(args.consumption, args.weather)
    target = _parse_month(args.date)
    value = predict_hybrid(model, ds, args.city, target)
    print(f"{target.isoformat()} {value:.6f}")
    return 0


def cmd_importance(args) -> int:
    model = load_model(args.model_file)
    if model.trees is None:
        raise DataError(
            f"{model.kind} model has no tree branch; feature importance needs a hybrid model"
        )
    shares = gbt.feature_importance(model.trees)
    ranked = sorted(
        ((name, shares.get(name, 0.0)) for name in model.trees.feature_names),
        key=lambda kv: (-kv[1], kv[0]),
    )
    table = pd.DataFrame(ranked, columns=["feature", "importance"])
    atomic_write_text(Path(args.out) / "importance.csv", _csv_text(table))
    for name, share in ranked:
        print(f"{name:<16}{share:8.4f} {'#' * round(share * 50)}")
    return 0


def cmd_synth(args) -> int:
    scenario = SynthScenario(
        cities=args.cities,
        months=args.months,
        start=_parse_month(args.start),
        driver=args.driver,
        noise=args.noise,
        missing_rate=args.missing_rate,
    )
    for path in write_csvs(args.out, scenario, seed=args.seed):
        print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(2, 5, 3))
    y = rng.normal(size=2)
    cells = ("lstm", "gru", "bilstm") if args.cell == "all" else (args.cell,)
    ok = True
    for kind in cells:
        net = RecurrentNetwork.build(kind, 3, hidden_size=4, num_layers=2, dropout=0.0, seed=args.seed)
        report = gradient_check(net, x, y, tolerance=args.tolerance)
        status = "PASS" if report.passed else "FAIL"
        print(f"{kind:<7} max relative error {report.max_rel_error:.3e}  {status}")
        ok &= report.passed
    return 0 if ok else EXIT_NUMERIC


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "importance": cmd_importance,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
