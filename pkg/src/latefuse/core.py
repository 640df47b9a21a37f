"""Shared domain types: integer-microsecond time, 2D states, boxes, trajectories."""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

# Timestamps are integer microseconds (GPS-time convention). Durations are
# signed integer microseconds; float seconds only appear at API edges.
Timestamp = int

US_PER_S = 1_000_000


def seconds_to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


def us_to_seconds(us: int) -> float:
    return us / US_PER_S


def wrap_angle(theta: float) -> float:
    """Wrap to [-pi, pi); angles already in range come back unchanged."""
    if -math.pi <= theta < math.pi:
        return theta
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


class AgentClass(str, Enum):
    CAR = "car"
    VAN = "van"
    TRUCK = "truck"
    MOTORCYCLE = "motorcycle"
    CYCLIST = "cyclist"
    PEDESTRIAN = "pedestrian"

    @property
    def code(self) -> int:
        return _CLASS_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "AgentClass":
        try:
            return _CODE_CLASSES[code]
        except KeyError:
            raise ValueError(f"unknown agent class code {code}") from None

    @property
    def is_vehicle(self) -> bool:
        return self in (AgentClass.CAR, AgentClass.VAN, AgentClass.TRUCK)


_CLASS_CODES = {c: i for i, c in enumerate(AgentClass)}
_CODE_CLASSES = {i: c for c, i in _CLASS_CODES.items()}

# Footprint used when a box must be synthesized for an agent known only by
# its position (length, width, height in meters).
DEFAULT_DIMS = {
    AgentClass.CAR: (4.5, 1.9, 1.6),
    AgentClass.VAN: (5.2, 2.0, 2.2),
    AgentClass.TRUCK: (8.0, 2.5, 3.5),
    AgentClass.MOTORCYCLE: (2.1, 0.8, 1.5),
    AgentClass.CYCLIST: (1.8, 0.7, 1.7),
    AgentClass.PEDESTRIAN: (0.6, 0.6, 1.75),
}


@dataclass(frozen=True)
class State2D:
    x: float
    y: float
    heading: Optional[float] = None
    speed: Optional[float] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")
        if self.heading is not None and not (-math.pi <= self.heading < math.pi):
            raise ValueError(f"heading {self.heading} outside [-pi, pi)")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "State2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class BoundingBox:
    center: State2D
    length: float
    width: float
    height: float
    heading: float
    agent_id: str
    cls: AgentClass

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(
                f"box {self.agent_id}: dims must be positive, got "
                f"({self.length}, {self.width}, {self.height})"
            )

    def corners(self) -> np.ndarray:
        """Ground-plane footprint corners (4, 2), counter-clockwise."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.center.x, self.center.y])

    def contains(self, x: float, y: float) -> bool:
        dx, dy = x - self.center.x, y - self.center.y
        c, s = math.cos(self.heading), math.sin(self.heading)
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        return abs(lx) <= self.length / 2.0 and abs(ly) <= self.width / 2.0


@dataclass(frozen=True)
class Trajectory:
    """Observed (timestamp, state) samples with strictly increasing times."""

    samples: tuple[tuple[Timestamp, State2D], ...]

    def __post_init__(self) -> None:
        ts = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples], dtype=np.int64)

    @property
    def xy(self) -> np.ndarray:
        return np.array([[s.x, s.y] for _, s in self.samples], dtype=float).reshape(-1, 2)


def _frozen(a) -> np.ndarray:
    """Read-only (n, 2) float copy."""
    a = np.array(a, dtype=float).reshape(-1, 2)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    """Future mean positions with per-sample diagonal variances.

    ``t_us`` holds absolute timestamps, ``mean`` is (n, 2) meters and ``var``
    is (n, 2) square meters (var_x, var_y).
    """

    t_us: tuple[int, ...]
    mean: np.ndarray
    var: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        t = tuple(map(int, self.t_us))
        mean = _frozen(self.mean)
        var = _frozen(self.var)
        if not (len(t) == len(mean) == len(var)):
            raise ValueError("t_us, mean and var lengths differ")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("predicted timestamps must be strictly increasing")
        if not np.isfinite(mean).all():
            raise ValueError("non-finite predicted mean")
        if not ((var > 0).all() and np.isfinite(var).all()):
            raise ValueError("predicted variances must be positive and finite")
        object.__setattr__(self, "t_us", t)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def __len__(self) -> int:
        return len(self.t_us)

    def __iter__(self) -> Iterator[tuple[int, State2D, float, float]]:
        for i, t in enumerate(self.t_us):
            yield t, State2D(float(self.mean[i, 0]), float(self.mean[i, 1])), float(
                self.var[i, 0]
            ), float(self.var[i, 1])

    def identical(self, other: "PredictedTrajectory") -> bool:
        """Bitwise equality of timestamps, means and variances."""
        return (
            self.t_us == other.t_us
            and self.mean.tobytes() == other.mean.tobytes()
            and self.var.tobytes() == other.var.tobytes()
        )

    @classmethod
    def from_samples(
        cls, samples: Sequence[tuple[int, State2D, float, float]]
    ) -> "PredictedTrajectory":
        return cls(
            t_us=tuple(t for t, _, _, _ in samples),
            mean=np.array([[s.x, s.y] for _, s, _, _ in samples], dtype=float),
            var=np.array([[vx, vy] for _, _, vx, vy in samples], dtype=float),
        )


def interpolate(traj: PredictedTrajectory, t: Timestamp) -> tuple[State2D, float, float]:
    """Linearly interpolate mean and variance at ``t``.

    Sample times are returned verbatim; ``t`` outside the sampled range raises
    ``ValueError``.
    """
    if len(traj) == 0:
        raise ValueError("cannot interpolate an empty trajectory")
    times = traj.t_us
    if t < times[0] or t > times[-1]:
        raise ValueError(f"t={t} outside [{times[0]}, {times[-1]}]")
    i = bisect_left(times, t)
    if times[i] == t:
        m, v = traj.mean[i], traj.var[i]
        return State2D(float(m[0]), float(m[1])), float(v[0]), float(v[1])
    t0, t1 = times[i - 1], times[i]
    w = (t - t0) / (t1 - t0)
    m = traj.mean[i - 1] + w * (traj.mean[i] - traj.mean[i - 1])
    v = traj.var[i - 1] + w * (traj.var[i] - traj.var[i - 1])
    return State2D(float(m[0]), float(m[1])), float(v[0]), float(v[1])


def interpolate_xy(times: Sequence[int], xy: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Vectorized linear interpolation of (n, 2) values; query must lie in range."""
    t = np.asarray(times, dtype=float)
    q = np.asarray(query, dtype=float)
    return np.column_stack([np.interp(q, t, xy[:, 0]), np.interp(q, t, xy[:, 1])])
