"""Regression loss and evaluation metrics (MSE, per-target R^2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements, plus its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def r2_score(pred: np.ndarray, target: np.ndarray) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot (SS_tot about the
    target mean). Raises when the target has no variance."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if target.size < 2:
        raise MetricError(f"r2 needs at least 2 points, got {target.size}")
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("r2 is undefined: target variance is zero")
    ss_res = float(np.sum((pred - target) ** 2))
    return 1.0 - ss_res / ss_tot


def per_target_r2(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """R^2 per column of (N, K) prediction/target matrices."""
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"expected matching (N, K) arrays, got {pred.shape} vs {target.shape}")
    out = np.empty(pred.shape[1], dtype=np.float64)
    for k in range(pred.shape[1]):
        try:
            out[k] = r2_score(pred[:, k], target[:, k])
        except MetricError as exc:
            raise MetricError(f"target column {k}: {exc}") from exc
    return out


@dataclass
class Metrics:
    mse: float
    r2_per_target: np.ndarray
    mean_r2: float

    def as_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mean_r2": self.mean_r2,
            "r2_per_target": [float(v) for v in self.r2_per_target],
        }


def compute_metrics(pred: np.ndarray, target: np.ndarray) -> Metrics:
    loss, _ = mse_loss(pred, target)
    r2 = per_target_r2(pred, target)
    return Metrics(mse=loss, r2_per_target=r2, mean_r2=float(r2.mean()))
