"""Forecasting with diagonal-Gaussian displacement uncertainty.

The built-in predictor is a physics baseline (least-squares velocity, and
optionally acceleration, over the observation window). Anything producing a
``PredictedTrajectory`` on the same grid can stand in for it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import PredictedTrajectory, State2D, Timestamp, Trajectory, seconds_to_us

Predictor = Callable[[Trajectory, State2D, "PredictorConfig", Timestamp], PredictedTrajectory]


@dataclass(frozen=True)
class PredictorConfig:
    history_window: float = 1.0  # seconds
    horizon: float = 2.0
    step: float = 0.1
    fit_acceleration: bool = False
    sigma0_sq: float = 0.04  # m^2
    sigma_v_sq: float = 0.25  # (m/s)^2
    single_sample_inflation: float = 25.0

    def __post_init__(self) -> None:
        if not (self.history_window > 0 and self.horizon > 0 and self.step > 0):
            raise ValueError("history_window, horizon and step must be positive")
        if self.horizon_us % self.step_us != 0:
            raise ValueError("horizon must be an integer multiple of step")

    @property
    def step_us(self) -> int:
        return seconds_to_us(self.step)

    @property
    def horizon_us(self) -> int:
        return seconds_to_us(self.horizon)

    @property
    def n_steps(self) -> int:
        return self.horizon_us // self.step_us

    def query_times(self, now_us: Timestamp) -> tuple[int, ...]:
        return tuple(now_us + k * self.step_us for k in range(1, self.n_steps + 1))


@dataclass(frozen=True, eq=False)
class DisplacementForecast:
    """Per-step mean displacements (n, 2) and their variances (n, 2)."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("displacement variances must be positive")


def fit_motion(history: Trajectory, now_us: Timestamp, window_s: float, fit_acceleration: bool):
    """Least-squares velocity (and acceleration) over the trailing window."""
    t = (history.times - now_us) / 1e6
    xy = history.xy
    keep = t >= -window_s - 1e-9
    t, xy = t[keep], xy[keep]
    n = len(t)
    if n < 2:
        return np.zeros(2), np.zeros(2)
    cols = [np.ones(n), t]
    if fit_acceleration and n >= 3:
        cols.append(0.5 * t**2)
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, xy, rcond=None)
    vel = coef[1]
    acc = coef[2] if len(cols) == 3 else np.zeros(2)
    return vel, acc


def predict(
    history: Trajectory,
    current: State2D,
    cfg: PredictorConfig,
    now_us: Optional[Timestamp] = None,
) -> PredictedTrajectory:
    """Roll out the baseline and integrate displacements from ``current``."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    if now_us is None:
        now_us = history.samples[-1][0]
    vel, acc = fit_motion(history, now_us, cfg.history_window, cfg.fit_acceleration)
    times = cfg.query_times(now_us)
    tau = np.array([(t - now_us) / 1e6 for t in times])
    # Per-step displacement of the fitted motion model, then cumulative sum.
    prev = np.concatenate([[0.0], tau[:-1]])
    disp = np.outer(tau - prev, vel) + 0.5 * np.outer(tau**2 - prev**2, acc)
    mean = np.array([current.x, current.y]) + np.cumsum(disp, axis=0)
    sigma0 = cfg.sigma0_sq * (cfg.single_sample_inflation if len(history) < 2 else 1.0)
    v = sigma0 + cfg.sigma_v_sq * tau**2
    return PredictedTrajectory(times, mean, np.column_stack([v, v]))


def to_displacements(pred: PredictedTrajectory, start: State2D) -> DisplacementForecast:
    """Step displacements of a forecast relative to the previous sample.

    Variances are carried per step unchanged.
    """
    pts = np.vstack([[start.x, start.y], pred.mean])
    return DisplacementForecast(np.diff(pts, axis=0), pred.var.copy())


def true_displacements(truth: Trajectory, start: State2D) -> np.ndarray:
    pts = np.vstack([[start.x, start.y], truth.xy])
    return np.diff(pts, axis=0)


def nll(forecast: DisplacementForecast, true_disp: np.ndarray) -> float:
    """Mean Gaussian negative log-likelihood over the forecast steps.

    The constant log(2*pi) term is omitted.
    """
    mean = np.asarray(forecast.mean, dtype=float).reshape(-1, 2)
    var = np.asarray(forecast.var, dtype=float).reshape(-1, 2)
    d = np.asarray(true_disp, dtype=float).reshape(-1, 2)
    if mean.shape != d.shape:
        raise ValueError("forecast and truth lengths differ")
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    per_step = ((d - mean) ** 2 / (2.0 * var)).sum(axis=1) + np.log(var).sum(axis=1) / 2.0
    return float(per_step.mean())
