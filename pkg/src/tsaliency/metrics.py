"""Forecast evaluation metrics: root relative squared error and mean
per-feature correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric's denominator vanishes (constant truth / zero variance)."""


@dataclass
class EvalBlock:
    truth: np.ndarray         # (rows, n)
    pred: np.ndarray          # same shape

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=np.float64)
        self.pred = np.asarray(self.pred, dtype=np.float64)
        if self.truth.ndim == 1:
            self.truth = self.truth[:, None]
        if self.pred.ndim == 1:
            self.pred = self.pred[:, None]
        if self.truth.shape != self.pred.shape:
            raise ValueError(
                f"truth shape {self.truth.shape} != pred shape {self.pred.shape}")
        if self.truth.shape[1] < 1:
            raise ValueError("need at least one feature")


def rse(block: EvalBlock) -> float:
    """sqrt(sum((y - yhat)^2)) / sqrt(sum((y - mean(y))^2)), both sums over
    every (row, feature) cell. Scale-free; 0 is perfect, 1 matches the
    constant-mean predictor."""
    y, yh = block.truth, block.pred
    denom = float(np.sum((y - y.mean()) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("RSE undefined: truth is constant")
    num = float(np.sum((y - yh) ** 2))
    return float(np.sqrt(num) / np.sqrt(denom))


def corr_stats(block: EvalBlock) -> tuple[float, int]:
    """Mean per-feature Pearson correlation between truth and prediction
    columns, plus the count of features excluded for zero variance (in
    either column)."""
    y, yh = block.truth, block.pred
    if y.shape[0] < 2:
        raise UndefinedMetricError("CORR needs at least 2 rows")
    yc = y - y.mean(axis=0)
    pc = yh - yh.mean(axis=0)
    sy = np.sqrt((yc ** 2).sum(axis=0))
    sp = np.sqrt((pc ** 2).sum(axis=0))
    ok = (sy > 0) & (sp > 0)
    excluded = int((~ok).sum())
    if not ok.any():
        raise UndefinedMetricError("CORR undefined: every feature has zero variance")
    r = (yc[:, ok] * pc[:, ok]).sum(axis=0) / (sy[ok] * sp[ok])
    return float(r.mean()), excluded


def corr(block: EvalBlock) -> float:
    return corr_stats(block)[0]
