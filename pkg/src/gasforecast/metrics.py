"""RMSE / MAPE / MPE and the per-city train/test report.

MAPE and MPE are percentages; a negative MPE means the model predicts too
high on average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError

REPORT_COLUMNS = ["city", "model", "split", "rmse", "mape_pct", "mpe_pct"]
SPLITS = ("train", "test")


def _series(actual, predicted, need_nonzero: bool):
    A = np.asarray(actual, dtype=float)
    P = np.asarray(predicted, dtype=float)
    if A.shape != P.shape:
        raise DataError(f"actual {A.shape} and predicted {P.shape} differ in shape")
    if A.size == 0:
        raise DataError("empty series")
    if need_nonzero and np.any(A == 0):
        raise DataError("actual values contain 0; percentage errors are undefined")
    return A, P


def rmse(actual, predicted) -> float:
    A, P = _series(actual, predicted, need_nonzero=False)
    return float(np.sqrt(np.mean((P - A) ** 2)))


def mape(actual, predicted) -> float:
    A, P = _series(actual, predicted, need_nonzero=True)
    return float(np.mean(np.abs((A - P) / A)) * 100.0)


def mpe(actual, predicted) -> float:
    A, P = _series(actual, predicted, need_nonzero=True)
    return float(np.mean((A - P) / A) * 100.0)


@dataclass
class EvalReport:
    """One row per (city, model, split) with raw-unit metrics."""

    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def cell(self, city: str, model: str, split: str) -> pd.Series:
        f = self.frame
        row = f[(f.city == city) & (f.model == model) & (f.split == split)]
        if len(row) != 1:
            raise KeyError((city, model, split))
        return row.iloc[0]

    def mean(self, model: str, split: str, column: str = "rmse") -> float:
        f = self.frame
        return float(f[(f.model == model) & (f.split == split)][column].mean())

    def to_text(self) -> str:
        """Wide layout: one block per split, city rows, metric columns per model."""
        f = self.frame
        models = list(dict.fromkeys(f["model"]))
        widths = {m: max(14, len(m) + 6) for m in models}
        city_w = max(12, int(f["city"].str.len().max()) + 2)
        lines = []
        for split in SPLITS:
            part = f[f.split == split]
            if part.empty:
                continue
            head = f"{split.capitalize():<6}{'city':<{city_w}}" + "".join(
                f"{m + ' RMSE':>{widths[m]}}{'MAPE':>9}{'MPE':>9}" for m in models
            )
            lines.append(head)
            for city in sorted(part["city"].unique()):
                cells = []
                for m in models:
                    r = part[(part.city == city) & (part.model == m)]
                    if r.empty:
                        cells.append(f"{'-':>{widths[m]}}{'-':>9}{'-':>9}")
                        continue
                    r = r.iloc[0]
                    cells.append(f"{r.rmse:>{widths[m]}.2f}{r.mape_pct:>8.2f}%{r.mpe_pct:>8.2f}%")
                lines.append(f"{'':<6}{city:<{city_w}}" + "".join(cells))
            lines.append("")
        return "\n".join(lines)


def evaluate(predictions: pd.DataFrame) -> EvalReport:
    """Score raw-unit predictions.

    ``predictions`` needs columns ``city, date, split, model, actual,
    predicted``. Every model must cover exactly the same (city, split, date)
    set.
    """
    needed = {"city", "date", "split", "model", "actual", "predicted"}
    missing = needed - set(predictions.columns)
    if missing:
        raise DataError(f"predictions lack columns {sorted(missing)}")
    if predictions.empty:
        raise DataError("no predictions to evaluate")
    models = list(dict.fromkeys(predictions["model"]))
    keys = None
    for m in models:
        part = predictions[predictions.model == m]
        k = sorted(zip(part.city, part.split, part.date.astype(str)))
        if keys is None:
            keys = k
        elif k != keys:
            raise DataError(f"model {m} was evaluated on a different (city, split, date) set")

    rows = []
    for city in sorted(predictions["city"].unique()):
        for m in models:
            for split in SPLITS:
                part = predictions[
                    (predictions.city == city) & (predictions.model == m) & (predictions.split == split)
                ]
                if part.empty:
                    continue
                A, P = part["actual"].to_numpy(), part["predicted"].to_numpy()
                rows.append([city, m, split, rmse(A, P), mape(A, P), mpe(A, P)])
    return EvalReport(pd.DataFrame(rows, columns=REPORT_COLUMNS))
