"""Evaluation metrics over vectorized prediction/truth tensors."""

from __future__ import annotations

import numpy as np


def rmse(truth: np.ndarray, prediction: np.ndarray) -> float:
    """Root mean squared error over all entries of equally shaped tensors."""
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.shape != prediction.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {prediction.shape}")
    diff = prediction.ravel() - truth.ravel()
    return float(np.sqrt(np.mean(diff * diff)))


def pcc(truth: np.ndarray, prediction: np.ndarray) -> float:
    """Pearson correlation of the vectorized tensors.

    Raises ValueError when either argument has zero variance: correlation is
    undefined there and a silent NaN would poison downstream aggregates.
    """
    a = np.asarray(truth, dtype=np.float64).ravel()
    b = np.asarray(prediction, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.mean(da * da))
    sb = np.sqrt(np.mean(db * db))
    if sa == 0.0 or sb == 0.0:
        raise ValueError("pcc is undefined for zero-variance input")
    return float(np.mean(da * db) / (sa * sb))


def persistence_forecast(window: np.ndarray, horizon: int) -> np.ndarray:
    """Model-free baseline: repeat the first frame for ``horizon`` steps."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return np.repeat(window[:1], horizon, axis=0)
