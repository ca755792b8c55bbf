"""Localization error statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch


@dataclass
class EvalResult:
    mean_l2_m: float
    std_l2_m: float
    per_axis_mae_m: tuple[float, float]
    errors: np.ndarray

    def to_dict(self, with_errors: bool = False) -> dict:
        d = {"mean_l2_m": self.mean_l2_m, "std_l2_m": self.std_l2_m,
             "mae_x_m": self.per_axis_mae_m[0], "mae_y_m": self.per_axis_mae_m[1], "count": int(len(self.errors))}
        if with_errors:
            d["errors"] = self.errors.tolist()
        return d


def evaluate(predictions, truths) -> EvalResult:
    """Per-sample L2 error with its mean, population std and per-axis MAE."""
    p = np.asarray(predictions, dtype=float).reshape(-1, 2)
    t = np.asarray(truths, dtype=float).reshape(-1, 2)
    if len(p) != len(t):
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} truths")
    if len(p) == 0:
        raise LengthMismatch("nothing to evaluate")
    diff = p - t
    err = np.hypot(diff[:, 0], diff[:, 1])
    mae = np.abs(diff).mean(axis=0)
    return EvalResult(float(err.mean()), float(err.std()), (float(mae[0]), float(mae[1])), err)
