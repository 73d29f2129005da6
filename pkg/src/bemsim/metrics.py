"""Weighted residual-error and tracking metrics.

All residual metrics weight zones by thermal capacity over all nine
zones; the temperature-tracking RMSE weights the seven building zones
only and measures deviation from the comfort reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .building import N_BUILDING, N_ZONES, BuildingParameters, _frozen_array
from .datagen import CalendarClock, month_index


@dataclass(frozen=True)
class MetricWeights:
    """Capacity weights over all nine zones; positive, sum to one."""

    wth: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "wth", _frozen_array(self.wth, (N_ZONES,)))
        if np.any(self.wth <= 0) or abs(self.wth.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to one")


def metric_weights(params: BuildingParameters) -> MetricWeights:
    return MetricWeights(wth=params.cth / params.cth.sum())


def ware(eps: np.ndarray, w: MetricWeights) -> float | np.ndarray:
    """Weighted absolute residual error of one step (or per row), K."""
    eps = np.asarray(eps, dtype=float)
    return np.abs(eps) @ w.wth


def wmare(eps: np.ndarray, w: MetricWeights) -> float:
    """Mean weighted absolute residual error over a log, K."""
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if eps.size == 0:
        raise ValueError("empty residual log")
    return float(np.mean(ware(eps, w)))


def wmre(eps: np.ndarray, w: MetricWeights) -> float:
    """Signed counterpart of wmare (exposes bias), K."""
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    if eps.size == 0:
        raise ValueError("empty residual log")
    return float(np.mean(eps @ w.wth))


def rmse_tracking(theta: np.ndarray, wthb: np.ndarray, ref: float = 22.0) -> float:
    """Capacity-weighted RMSE of building-zone temperature tracking, K."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.size == 0:
        raise ValueError("empty temperature log")
    per_zone = np.sqrt(np.mean((theta[:, :N_BUILDING] - ref) ** 2, axis=0))
    return float(per_zone @ np.asarray(wthb, dtype=float))


def monthly_series(steps: np.ndarray, eps: np.ndarray, theta: np.ndarray,
                   w: MetricWeights, wthb: np.ndarray, clock: CalendarClock,
                   ref: float = 22.0) -> dict:
    """Per-calendar-month wmare/wmre/rmse along a step log."""
    months = np.asarray(month_index(clock, np.asarray(steps)))
    out = {"month": [], "wmare": [], "wmre": [], "rmse": []}
    for m in np.unique(months):
        sel = months == m
        out["month"].append(int(m))
        out["wmare"].append(wmare(eps[sel], w))
        out["wmre"].append(wmre(eps[sel], w))
        out["rmse"].append(rmse_tracking(theta[sel], wthb, ref))
    return out
