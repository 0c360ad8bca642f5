"""Regression losses over a batch of predicted grid cells.

Both return ``(loss, d loss / d prediction)``; the mean runs over every
target cell in the batch.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError, ShapeError


def _check(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ShapeError("prediction vs target", target.shape, pred.shape)


def rle_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Risk loss error: squared error weighted by the (non-negative) target value.

    A missed high-activity cell costs in proportion to its activity, while
    over-predicting a zero cell costs nothing.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    _check(pred, target)
    if np.any(target < 0):
        raise DataError("RLE targets must be non-negative")
    n = target.size
    diff = pred - target
    return float(np.sum(target * diff * diff) / n), 2.0 * target * diff / n


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    _check(pred, target)
    diff = pred - target
    return float(np.sum(diff * diff) / target.size), 2.0 * diff / target.size


LOSSES = {"rle": rle_loss, "mse": mse_loss}
