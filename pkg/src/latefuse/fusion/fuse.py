"""KF-gated late fusion of pooled peer forecasts into the prediction map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..collab import L, MapEntry, PredictionMap
from ..core import PredictedTrajectory, interpolate_xy
from .gp import gp_fit, gp_posterior_mean, gp_posterior_var

# Posterior variance of a normalized reconstruction can collapse to ~0 near
# dense, low-noise data; keep outputs strictly positive.
MIN_FUSED_VAR = 1e-6


@dataclass(frozen=True)
class GateConfig:
    min_streak: int = 3
    cov_ratio: float = 2.0

    def __post_init__(self) -> None:
        if self.min_streak < 1:
            raise ValueError("min_streak must be >= 1")
        if not self.cov_ratio > 1:
            raise ValueError("cov_ratio threshold must exceed 1")


def kf_gate(streak: int, cov_ratio: float, cfg: GateConfig) -> bool:
    """Open when the track has coasted long enough or its covariance has grown."""
    return streak >= cfg.min_streak or cov_ratio >= cfg.cov_ratio


def _pooled(pool: Sequence[PredictedTrajectory]):
    t = np.concatenate([np.asarray(p.t_us, dtype=np.int64) for p in pool])
    xy = np.vstack([p.mean for p in pool])
    var = np.vstack([p.var for p in pool])
    return t, xy, var


def _ego_timeline(entry: MapEntry):
    """Ego forecast with the current state prepended, as (t, xy, var)."""
    pred = entry.local_pred
    t = np.asarray(pred.t_us, dtype=np.int64)
    xy, var = pred.mean, pred.var
    if entry.t_us < t[0]:
        t = np.concatenate([[entry.t_us], t])
        xy = np.vstack([[entry.current_state.x, entry.current_state.y], xy])
        var = np.vstack([var[:1], var])
    return t, xy, var


def _seconds(t_us, ref_us) -> np.ndarray:
    return (np.asarray(t_us, dtype=np.int64) - ref_us) / 1e6


def fuse_category_L(
    entry: MapEntry,
    ego_query_times: Sequence[int],
    gate_cfg: GateConfig,
    track_stats: tuple[int, float],
) -> PredictedTrajectory:
    """Residual correction of the ego forecast by a GP over pooled residuals.

    Returns ``entry.local_pred`` itself when the gate is closed, the pool is
    empty or no pooled sample falls within the ego horizon. Variances are the
    ego variances.
    """
    if entry.category != L or entry.local_pred is None:
        raise ValueError(f"entry {entry.agent_id!r} is not a local (L) entry")
    streak, ratio = track_stats
    if not entry.pool or not kf_gate(streak, ratio, gate_cfg):
        return entry.local_pred

    ego_t, ego_xy, ego_var = _ego_timeline(entry)
    pt, pxy, pvar = _pooled(entry.pool)
    inside = (pt >= ego_t[0]) & (pt <= ego_t[-1])
    if not inside.any():
        return entry.local_pred
    pt, pxy, pvar = pt[inside], pxy[inside], pvar[inside]

    resid = pxy - interpolate_xy(ego_t, ego_xy, pt)
    q = np.asarray(ego_query_times, dtype=np.int64)
    if tuple(int(v) for v in q) == entry.local_pred.t_us:
        base, base_var = entry.local_pred.mean, entry.local_pred.var
    else:
        base, base_var = interpolate_xy(ego_t, ego_xy, q), interpolate_xy(ego_t, ego_var, q)
    ts, tq = _seconds(pt, entry.t_us), _seconds(q, entry.t_us)
    mean = np.array(base, dtype=float, copy=True)
    for c in range(2):
        model = gp_fit(ts, resid[:, c], pvar[:, c])
        mean[:, c] += gp_posterior_mean(model, tq)
    return PredictedTrajectory(tuple(int(v) for v in q), mean, base_var)


def fuse_category_S(entry: MapEntry, ego_query_times: Sequence[int]) -> PredictedTrajectory:
    """Reconstruct a forecast purely from pooled shares.

    Each coordinate is normalized to zero mean and unit variance, fitted by a
    GP and mapped back; variances are the de-normalized posterior variances.
    """
    if not entry.pool:
        raise ValueError(f"entry {entry.agent_id!r} has an empty pool")
    pt, pxy, pvar = _pooled(entry.pool)
    q = np.asarray(ego_query_times, dtype=np.int64)
    ts, tq = _seconds(pt, entry.t_us), _seconds(q, entry.t_us)
    mean = np.empty((len(q), 2))
    var = np.empty((len(q), 2))
    for c in range(2):
        y = pxy[:, c]
        shift = float(y.mean())
        scale = float(y.std())
        if not scale > 0:
            scale = 1.0
        model = gp_fit(ts, (y - shift) / scale, pvar[:, c] / scale**2)
        mean[:, c] = gp_posterior_mean(model, tq) * scale + shift
        var[:, c] = gp_posterior_var(model, tq) * scale**2
    return PredictedTrajectory(tuple(int(v) for v in q), mean, np.maximum(var, MIN_FUSED_VAR))


def fuse_map(
    pmap: PredictionMap,
    ego_query_times: Sequence[int],
    gate_cfg: GateConfig,
    track_stats: Mapping[str, tuple[int, float]],
) -> PredictionMap:
    """Fuse every entry, then clear all pools.

    ``track_stats`` maps L-entry ids to (streak, cov_ratio). S entries with an
    empty pool end up with no fused forecast.
    """
    for e in pmap:
        if e.category == L:
            stats = track_stats.get(e.agent_id, (0, 1.0))
            e.fused_pred = fuse_category_L(e, ego_query_times, gate_cfg, stats)
        else:
            e.fused_pred = fuse_category_S(e, ego_query_times) if e.pool else None
    for e in pmap:
        e.pool.clear()
    return pmap
