import math
from typing import Sequence

import numpy as np


def order_fit(scales: Sequence[float], values: Sequence[float]) -> float:
    """
    Slope of log(value) against log(scale) by least squares. Values at or
    below zero are dropped; fewer than two usable points give nan.
    """
    scales = np.asarray(scales, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    keep = (values > 0) & (scales > 0) & np.isfinite(values)
    if keep.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(scales[keep]), np.log(values[keep]), 1)
    return float(slope)


def rate_fit(scales: Sequence[float], values: Sequence[float]) -> dict:
    """Order, prefactor and worst relative misfit of value ~ A * scale^order."""
    scales = np.asarray(scales, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    keep = (values > 0) & (scales > 0) & np.isfinite(values)
    if keep.sum() < 2:
        return {"order": math.nan, "prefactor": math.nan, "misfit": math.nan}
    slope, intercept = np.polyfit(np.log(scales[keep]), np.log(values[keep]), 1)
    model = np.exp(intercept) * scales[keep] ** slope
    misfit = float(np.max(np.abs(model - values[keep]) / values[keep]))
    return {"order": float(slope), "prefactor": float(np.exp(intercept)), "misfit": misfit}


def is_nonincreasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) <= tolerance))
