"""Residual-error targets, regression features and dataset management.

Two disjoint feature sets feed two separate estimators:

  building zones (1..7): p_dem, theta_air, theta_air lag 1, lag 2, tod, dow
  server zones   (8..9): p_dem, theta_air, p_server1, p_server2

The training target is the observed one-step model error, corrected for
disturbance-forecast error by recomputing the prediction with measured
disturbances:

  eps(k) = (theta_measured(k+1) - theta_predicted(k+1)) + eps_hat(k)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .building import (N_BUILDING, N_ZONES, DiscreteModel, Disturbance,
                       ThermalInput, ThermalState, step_thermal)
from .datagen import CalendarClock, TimeSeriesFrame, month_index

BUILDING = "building"
SERVER = "server"
BUILDING_FEATURES = ("p_dem", "theta_air", "theta_air_lag1", "theta_air_lag2",
                     "tod", "dow")
SERVER_FEATURES = ("p_dem", "theta_air", "p_server1", "p_server2")
GROUP_FEATURES = {BUILDING: BUILDING_FEATURES, SERVER: SERVER_FEATURES}
GROUP_ZONES = {BUILDING: list(range(N_BUILDING)),
               SERVER: list(range(N_BUILDING, N_ZONES))}


class LagUnavailableError(IndexError):
    """Lagged ambient features do not exist this early in the span."""


def compute_target(x_measured_next: ThermalState, x_predicted_next: ThermalState,
                   eps_hat_applied: np.ndarray) -> np.ndarray:
    """Observed model error in K, per zone (9,).

    x_predicted_next must be the prediction that already contains
    eps_hat_applied (possibly zero).
    """
    eps_hat_applied = np.asarray(eps_hat_applied, dtype=float)
    return (x_measured_next.theta - x_predicted_next.theta) + eps_hat_applied


def corrected_prediction(model: DiscreteModel, x_k: ThermalState, u_k: ThermalInput,
                         d_measured_k: Disturbance, eps_hat_k: np.ndarray) -> ThermalState:
    """Re-predict the next state using measured (realized) disturbances so
    targets exclude disturbance-forecast error."""
    return step_thermal(model, x_k, u_k, d_measured_k, eps_hat_k)


def extract_features(frame: TimeSeriesFrame, k: int, group: str) -> np.ndarray:
    """Feature vector at absolute step k for the given zone group."""
    i = frame.loc(k)
    if group == BUILDING:
        if i < 2:
            raise LagUnavailableError(
                f"building features need two ambient lags; step {k} is too early")
        return np.array([frame.p_dem[i], frame.theta_air[i], frame.theta_air[i - 1],
                         frame.theta_air[i - 2], frame.tod[i], frame.dow[i]])
    if group == SERVER:
        return np.array([frame.p_dem[i], frame.theta_air[i],
                         frame.p_server[i, 0], frame.p_server[i, 1]])
    raise ValueError(f"unknown zone group {group!r}")


def feature_matrix(frame: TimeSeriesFrame, ks: np.ndarray, group: str) -> np.ndarray:
    """Vectorized extract_features over many steps."""
    ks = np.asarray(ks, dtype=int)
    i = ks - frame.start
    if np.any(i < 0) or np.any(i >= frame.n):
        raise IndexError("steps outside frame")
    if group == BUILDING:
        if np.any(i < 2):
            raise LagUnavailableError("building features need two ambient lags")
        return np.column_stack([frame.p_dem[i], frame.theta_air[i],
                                frame.theta_air[i - 1], frame.theta_air[i - 2],
                                frame.tod[i], frame.dow[i]])
    if group == SERVER:
        return np.column_stack([frame.p_dem[i], frame.theta_air[i],
                                frame.p_server[i, 0], frame.p_server[i, 1]])
    raise ValueError(f"unknown zone group {group!r}")


@dataclass
class ResidualDataset:
    """(step, features, target) rows for one zone group.

    Step indices are strictly increasing; feature and target widths are
    fixed by the group.
    """

    group: str
    steps: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=int)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n_feat = len(GROUP_FEATURES[self.group])
        n_zone = len(GROUP_ZONES[self.group])
        if self.x.shape != (self.steps.size, n_feat):
            raise ValueError(f"features must be (n, {n_feat}), got {self.x.shape}")
        if self.y.shape != (self.steps.size, n_zone):
            raise ValueError(f"targets must be (n, {n_zone}), got {self.y.shape}")
        if self.steps.size and np.any(np.diff(self.steps) <= 0):
            raise ValueError("step indices must be strictly increasing")

    @classmethod
    def empty(cls, group: str) -> "ResidualDataset":
        n_feat = len(GROUP_FEATURES[group])
        n_zone = len(GROUP_ZONES[group])
        return cls(group=group, steps=np.zeros(0, dtype=int),
                   x=np.zeros((0, n_feat)), y=np.zeros((0, n_zone)))

    def __len__(self) -> int:
        return self.steps.size

    def extended(self, steps, x, y) -> "ResidualDataset":
        """New dataset with rows appended (steps must continue increasing)."""
        return ResidualDataset(group=self.group,
                               steps=np.concatenate([self.steps, np.asarray(steps, dtype=int)]),
                               x=np.vstack([self.x, x]), y=np.vstack([self.y, y]))


def assemble_dataset(history: ResidualDataset, prior: ResidualDataset | None = None,
                     window_months: int | None = None, now: int | None = None,
                     clock: CalendarClock | None = None) -> ResidualDataset:
    """Training data per the availability mode.

    history only (no prior, no window); prior ++ history; or the trailing
    `window_months` calendar months before `now` out of prior ++ history.
    """
    if prior is None or len(prior) == 0:
        merged = history
    else:
        if prior.group != history.group:
            raise ValueError("cannot merge datasets of different zone groups")
        merged = prior.extended(history.steps, history.x, history.y)
    if window_months is None:
        return merged
    if now is None:
        raise ValueError("windowing requires `now`")
    clock = clock or CalendarClock()
    cutoff = month_index(clock, now) - window_months
    keep = np.asarray(month_index(clock, merged.steps) >= cutoff)
    return ResidualDataset(group=merged.group, steps=merged.steps[keep],
                           x=merged.x[keep], y=merged.y[keep])
