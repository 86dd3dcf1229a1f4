"""Regression and classification evaluation: MAE/RMSE/R2, confusion
counts with accuracy and precision, ROC sweep, and trapezoid AUC."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, NumericError, ParameterError


@dataclass
class RegressionReport:
    mae: float
    rmse: float
    r2: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "r2": self.r2}


@dataclass
class ClassificationReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float | None        # None when no positive predictions exist
    roc_points: list[tuple[float, float, float]]   # (fpr, tpr, threshold)
    auc: float

    def to_dict(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "auc": self.auc,
            "roc_points": [list(p) for p in self.roc_points],
        }


def regression_metrics(pred, real) -> RegressionReport:
    """MAE, RMSE and the coefficient of determination about mean(real)."""
    pred = np.asarray(pred, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if pred.shape != real.shape or pred.ndim != 1 or pred.size == 0:
        raise DimensionError(
            f"need equal non-empty 1-D inputs, got {pred.shape} and {real.shape}"
        )
    err = pred - real
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    ss_tot = float(((real - real.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise NumericError("R2 is undefined: real values have zero variance")
    r2 = 1.0 - float((err * err).sum()) / ss_tot
    return RegressionReport(mae, rmse, r2)


def classification_metrics(scores, labels, threshold: float = 0.5) -> ClassificationReport:
    """Confusion counts at ``threshold`` plus a full ROC sweep and AUC.

    A sample is predicted positive when its score is >= threshold. The
    ROC is swept over every distinct score (descending) with sentinel
    endpoints, so fpr runs 0 -> 1 monotonically.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise DataError("no samples to score")
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"need equal 1-D inputs, got {scores.shape} and {labels.shape}"
        )
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ParameterError("scores must lie in [0, 1]")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ParameterError("labels must be binary")

    pos = labels == 1.0
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    predicted = scores >= threshold
    tp = int((predicted & pos).sum())
    fp = int((predicted & ~pos).sum())
    fn = n_pos - tp
    tn = n_neg - fp
    accuracy = (tp + tn) / labels.size
    precision = tp / (tp + fp) if tp + fp > 0 else None

    roc_points = [(0.0, 0.0, np.inf)]
    for thr in np.unique(scores)[::-1]:
        hit = scores >= thr
        tpr = float((hit & pos).sum()) / n_pos if n_pos else 0.0
        fpr = float((hit & ~pos).sum()) / n_neg if n_neg else 0.0
        roc_points.append((fpr, tpr, float(thr)))
    if roc_points[-1][:2] != (1.0, 1.0):
        roc_points.append((1.0, 1.0, -np.inf))

    auc = 0.0
    for (f0, t0, _), (f1, t1, _) in zip(roc_points, roc_points[1:]):
        auc += (f1 - f0) * (t0 + t1) / 2.0
    return ClassificationReport(tp, tn, fp, fn, accuracy, precision, roc_points, auc)


def write_roc_csv(report: ClassificationReport, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("fpr,tpr,threshold\n")
        for fpr, tpr, thr in report.roc_points:
            fh.write(f"{fpr!r},{tpr!r},{thr!r}\n")


def write_comparison_csv(rows: list[dict], path):
    """Comparison table: model, mae, rmse, r2 (r2 as a percentage).

    Rows carrying ``not_reproduced`` emit marker cells instead of
    numbers. Any numeric row with mae > rmse is impossible for a common
    prediction vector, so it is flagged on stderr rather than silently
    written as truth.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("model,mae,rmse,r2\n")
        for row in rows:
            if row.get("not_reproduced"):
                fh.write(f"{row['model']},not reproduced,not reproduced,not reproduced\n")
                continue
            if row["mae"] > row["rmse"]:
                warnings.warn(
                    f"row {row['model']!r} has MAE {row['mae']:.4f} > RMSE {row['rmse']:.4f}; "
                    "these cannot come from one prediction vector"
                )
            fh.write(
                f"{row['model']},{row['mae']:.2f},{row['rmse']:.2f},{100.0 * row['r2']:.2f}\n"
            )
