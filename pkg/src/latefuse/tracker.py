"""2D constant-acceleration Kalman tracker with GT-ID and Hungarian/NIS association."""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AgentClass, BoundingBox, State2D, Timestamp, Trajectory, us_to_seconds, wrap_angle

GT_ID = "gt_id"
HUNGARIAN_NIS = "hungarian_nis"

_H = np.zeros((2, 6))
_H[0, 0] = _H[1, 1] = 1.0


class NumericError(ArithmeticError):
    pass


@dataclass
class KfState:
    x_vec: np.ndarray  # [x, y, vx, vy, ax, ay]
    P: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.x_vec[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x_vec[2:4]

    def check(self, tol: float = 1e-9) -> None:
        if not np.allclose(self.P, self.P.T, atol=tol, rtol=0.0):
            raise NumericError("covariance lost symmetry")
        if np.linalg.eigvalsh(self.P).min() < -tol * max(1.0, np.abs(self.P).max()):
            raise NumericError("covariance not positive semi-definite")


def transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[0, 2] = F[1, 3] = dt
    F[2, 4] = F[3, 5] = dt
    F[0, 4] = F[1, 5] = 0.5 * dt * dt
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    # Discrete white-jerk model, applied independently to both axes.
    g = np.array([dt**3 / 6.0, dt**2 / 2.0, dt])
    block = q * np.outer(g, g)
    Q = np.zeros((6, 6))
    for axis in range(2):
        idx = [axis, axis + 2, axis + 4]
        Q[np.ix_(idx, idx)] = block
    return Q


def kf_predict(kf: KfState, dt: float, q: float) -> KfState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not (np.all(np.isfinite(kf.x_vec)) and np.all(np.isfinite(kf.P)) and math.isfinite(q)):
        raise NumericError("non-finite Kalman state")
    F = transition(dt)
    P = F @ kf.P @ F.T + process_noise(dt, q)
    return KfState(F @ kf.x_vec, 0.5 * (P + P.T))


def _innovation(kf: KfState, z: Sequence[float], r: float) -> tuple[np.ndarray, np.ndarray]:
    nu = np.asarray(z, dtype=float) - kf.x_vec[:2]
    S = kf.P[:2, :2] + r * np.eye(2)
    return nu, 0.5 * (S + S.T)


def _chol_or_jitter(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(S + 1e-9 * np.eye(len(S)))
    except np.linalg.LinAlgError:
        raise NumericError("singular innovation covariance") from None


def nis(kf: KfState, z: Sequence[float], r: float) -> float:
    """Normalized innovation squared of measurement ``z`` under ``kf``."""
    nu, S = _innovation(kf, z, r)
    L = _chol_or_jitter(S)
    w = np.linalg.solve(L, nu)
    return float(w @ w)


def kf_update(kf: KfState, z: Sequence[float], r: float) -> tuple[KfState, float]:
    if not r > 0:
        raise ValueError(f"measurement variance must be positive, got {r}")
    nu, S = _innovation(kf, z, r)
    L = _chol_or_jitter(S)
    w = np.linalg.solve(L, nu)
    PHt = kf.P[:, :2]
    # K = P H^T S^-1 via the Cholesky factor of S.
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    x = kf.x_vec + K @ nu
    # Joseph form keeps P symmetric PSD.
    IKH = np.eye(6) - K @ _H
    P = IKH @ kf.P @ IKH.T + r * (K @ K.T)
    return KfState(x, 0.5 * (P + P.T)), float(w @ w)


class RunningMedian:
    """Streaming median over all values pushed so far (two heaps)."""

    def __init__(self) -> None:
        self._lo: list[float] = []  # max-heap via negation
        self._hi: list[float] = []

    def __len__(self) -> int:
        return len(self._lo) + len(self._hi)

    def push(self, value: float) -> None:
        if self._lo and value > -self._lo[0]:
            heapq.heappush(self._hi, value)
        else:
            heapq.heappush(self._lo, -value)
        if len(self._lo) > len(self._hi) + 1:
            heapq.heappush(self._hi, -heapq.heappop(self._lo))
        elif len(self._hi) > len(self._lo):
            heapq.heappush(self._lo, -heapq.heappop(self._hi))

    def median(self) -> float:
        if not self._lo:
            raise ValueError("median of empty history")
        if len(self._lo) > len(self._hi):
            return -self._lo[0]
        return 0.5 * (-self._lo[0] + self._hi[0])


@dataclass
class Gates:
    euclid_confirmed_m: float = 2.0
    euclid_tentative_m: float = 1.0
    vehicle_scale: float = 2.0
    nis_max: float = 9.21

    def euclid(self, cls: AgentClass, confirmed: bool) -> float:
        gate = self.euclid_confirmed_m if confirmed else self.euclid_tentative_m
        return gate * self.vehicle_scale if cls.is_vehicle else gate


@dataclass
class TrackerConfig:
    mode: str = GT_ID
    q: float = 0.5
    r: float = 0.09
    lifetime: int = 10
    confirm_hits: int = 2
    history_capacity: int = 30
    dims_ema: float = 0.1
    init_vel_var: float = 100.0
    init_acc_var: float = 10.0
    gates: Gates = field(default_factory=Gates)

    def __post_init__(self) -> None:
        if self.mode not in (GT_ID, HUNGARIAN_NIS):
            raise ValueError(f"unknown association mode {self.mode!r}")


@dataclass
class TrackedAgent:
    track_id: str
    cls: AgentClass
    kf: KfState
    box_dims: tuple[float, float, float]
    heading: float
    history: deque = field(default_factory=deque)  # (t_us, x, y)
    streak: int = 0
    cov_trace_history: list[float] = field(default_factory=list)
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    bootstrapped: bool = False
    _median: RunningMedian = field(default_factory=RunningMedian, repr=False)

    def record_trace(self) -> None:
        tr = float(np.trace(self.kf.P))
        self.cov_trace_history.append(tr)
        self._median.push(tr)

    def history_trajectory(self) -> Trajectory:
        return Trajectory(tuple((t, State2D(x, y)) for t, x, y in self.history))

    def state(self) -> State2D:
        x, y, vx, vy = self.kf.x_vec[:4]
        return State2D(float(x), float(y), heading=wrap_angle(self.heading), speed=float(math.hypot(vx, vy)))

    def box(self) -> BoundingBox:
        l, w, h = self.box_dims
        return BoundingBox(self.state(), l, w, h, self.heading, self.track_id, self.cls)


def gate_stats(track: TrackedAgent) -> tuple[int, float]:
    """Prediction-only streak and current trace(P) over its running median."""
    if not track.cov_trace_history:
        raise ValueError("track has no covariance history")
    med = track._median.median()
    current = track.cov_trace_history[-1]
    if med == 0:
        return track.streak, math.inf
    return track.streak, current / med


def min_cost_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment (Hungarian)."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


@dataclass
class Association:
    matches: list[tuple[int, int]]  # (track index, detection index)
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def associate(
    tracks: Sequence[TrackedAgent],
    detections: Sequence[BoundingBox],
    mode: str,
    gates: Gates,
    r: float = 0.09,
) -> Association:
    if mode == GT_ID:
        by_id = {d.agent_id: j for j, d in enumerate(detections)}
        matches = [(i, by_id[t.track_id]) for i, t in enumerate(tracks) if t.track_id in by_id]
    elif mode == HUNGARIAN_NIS:
        matches = _associate_nis(tracks, detections, gates, r)
    else:
        raise ValueError(f"unknown association mode {mode!r}")
    mt = {i for i, _ in matches}
    md = {j for _, j in matches}
    return Association(
        sorted(matches),
        [i for i in range(len(tracks)) if i not in mt],
        [j for j in range(len(detections)) if j not in md],
    )


_INADMISSIBLE = 1e12


def _associate_nis(tracks, detections, gates: Gates, r: float) -> list[tuple[int, int]]:
    if not tracks or not detections:
        return []
    cost = np.full((len(tracks), len(detections)), _INADMISSIBLE)
    for i, trk in enumerate(tracks):
        px, py = trk.kf.position
        gate = None
        for j, det in enumerate(detections):
            if det.cls != trk.cls:
                continue
            if gate is None:
                gate = gates.euclid(trk.cls, trk.confirmed)
            if math.hypot(det.center.x - px, det.center.y - py) > gate:
                continue
            d2 = nis(trk.kf, (det.center.x, det.center.y), r)
            if d2 <= gates.nis_max:
                cost[i, j] = d2
    return [(i, j) for i, j in min_cost_assignment(cost) if cost[i, j] < _INADMISSIBLE]


class Tracker:
    """Per-vehicle multi-object tracker."""

    def __init__(self, cfg: Optional[TrackerConfig] = None) -> None:
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[TrackedAgent] = []
        self.t_us: Optional[int] = None
        self._prev_detections: list[BoundingBox] = []
        self._ids = itertools.count(1)

    def by_id(self, track_id: str) -> Optional[TrackedAgent]:
        for trk in self.tracks:
            if trk.track_id == track_id:
                return trk
        return None

    def step(self, detections: Iterable[BoundingBox], t_us: Timestamp) -> list[TrackedAgent]:
        detections = list(detections)
        cfg = self.cfg
        if self.t_us is not None:
            if t_us <= self.t_us:
                raise ValueError(f"tracker time must increase ({t_us} <= {self.t_us})")
            dt = us_to_seconds(t_us - self.t_us)
            for trk in self.tracks:
                trk.kf = kf_predict(trk.kf, dt, cfg.q)
        else:
            dt = None

        assoc = associate(self.tracks, detections, cfg.mode, cfg.gates, cfg.r)
        for i, j in assoc.matches:
            trk, det = self.tracks[i], detections[j]
            if not trk.bootstrapped and trk.hits == 1 and trk.streak == 0 and dt:
                self._two_point_init(trk, det, dt)
            else:
                trk.kf, _ = kf_update(trk.kf, (det.center.x, det.center.y), cfg.r)
            trk.streak = 0
            trk.misses = 0
            trk.hits += 1
            trk.confirmed = trk.confirmed or trk.hits >= cfg.confirm_hits
            a = cfg.dims_ema
            trk.box_dims = tuple(
                (1 - a) * old + a * new
                for old, new in zip(trk.box_dims, (det.length, det.width, det.height))
            )
            trk.heading = det.heading
        for i in assoc.unmatched_tracks:
            trk = self.tracks[i]
            trk.streak += 1
            trk.misses += 1
            vx, vy = trk.kf.velocity
            if math.hypot(vx, vy) > 0.5:
                trk.heading = wrap_angle(math.atan2(vy, vx))

        survivors = [trk for trk in self.tracks if trk.misses <= cfg.lifetime]
        for j in assoc.unmatched_detections:
            survivors.append(self._spawn(detections[j], dt))
        for trk in survivors:
            trk.history.append((t_us, float(trk.kf.x_vec[0]), float(trk.kf.x_vec[1])))
            while len(trk.history) > cfg.history_capacity:
                trk.history.popleft()
            trk.record_trace()

        self.tracks = survivors
        self.t_us = t_us
        self._prev_detections = detections
        return list(self.tracks)

    def _spawn(self, det: BoundingBox, dt: Optional[float]) -> TrackedAgent:
        cfg = self.cfg
        x = np.zeros(6)
        x[0], x[1] = det.center.x, det.center.y
        P = np.diag([cfg.r, cfg.r, cfg.init_vel_var, cfg.init_vel_var, cfg.init_acc_var, cfg.init_acc_var])
        prev = self._bootstrap_source(det) if dt else None
        if prev is not None:
            x[2] = (det.center.x - prev.center.x) / dt
            x[3] = (det.center.y - prev.center.y) / dt
            P[2, 2] = P[3, 3] = min(cfg.init_vel_var, 2.0 * cfg.r / (dt * dt))
        track_id = det.agent_id if cfg.mode == GT_ID else f"T{next(self._ids)}"
        trk = TrackedAgent(
            track_id=track_id,
            cls=det.cls,
            kf=KfState(x, P),
            box_dims=(det.length, det.width, det.height),
            heading=det.heading,
            history=deque(),
            bootstrapped=prev is not None,
        )
        trk.confirmed = trk.hits >= cfg.confirm_hits
        return trk

    def _two_point_init(self, trk: TrackedAgent, det: BoundingBox, dt: float) -> None:
        # Second sighting of a track born without a velocity estimate:
        # restart from position differencing instead of a biased update.
        cfg = self.cfg
        x0, y0 = trk.history[-1][1], trk.history[-1][2]
        x = np.zeros(6)
        x[0], x[1] = det.center.x, det.center.y
        x[2], x[3] = (det.center.x - x0) / dt, (det.center.y - y0) / dt
        P = np.diag([cfg.r, cfg.r, 2.0 * cfg.r / (dt * dt), 2.0 * cfg.r / (dt * dt),
                     cfg.init_acc_var, cfg.init_acc_var])
        P[0, 2] = P[2, 0] = P[1, 3] = P[3, 1] = cfg.r / dt
        trk.kf = KfState(x, P)
        trk.bootstrapped = True

    def _bootstrap_source(self, det: BoundingBox) -> Optional[BoundingBox]:
        gate = self.cfg.gates.euclid(det.cls, confirmed=True)
        best, best_d = None, gate
        for prev in self._prev_detections:
            if prev.cls != det.cls:
                continue
            d = det.center.distance_to(prev.center)
            if d <= best_d:
                best, best_d = prev, d
        return best
