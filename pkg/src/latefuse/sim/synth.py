"""Seeded synthetic scenarios built from constant-velocity agents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

import numpy as np

from ..core import DEFAULT_DIMS, AgentClass, BoundingBox, State2D, seconds_to_us, wrap_angle
from ..occlusion import occlusion_scores
from .scenario import Frame, Scenario, ScenarioMeta, VehicleFrame

PRESETS = ("occlusion_crossing", "convoy", "random_traffic")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class Mover:
    agent_id: str
    cls: AgentClass
    x0: float
    y0: float
    vx: float
    vy: float
    heading: Optional[float] = None  # defaults to the direction of travel
    dims: Optional[tuple[float, float, float]] = None

    def box(self, t: float) -> BoundingBox:
        x, y = self.x0 + self.vx * t, self.y0 + self.vy * t
        if self.heading is not None:
            h = self.heading
        else:
            h = math.atan2(self.vy, self.vx) if (self.vx or self.vy) else 0.0
        h = wrap_angle(h)
        l, w, ht = self.dims or DEFAULT_DIMS[self.cls]
        speed = math.hypot(self.vx, self.vy)
        return BoundingBox(State2D(x, y, heading=h, speed=speed), l, w, ht, h, self.agent_id, self.cls)


def _build(
    scenario_id: str,
    vehicles: list[Mover],
    others: list[Mover],
    duration: float,
    dt: float,
    sensor_range_m: float,
    extra: dict,
) -> Scenario:
    n_frames = int(round(duration / dt))
    dt_us = seconds_to_us(dt)
    frames = []
    for k in range(n_frames):
        t_us = k * dt_us
        t = t_us / 1e6
        gt = tuple(m.box(t) for m in vehicles + others)
        per_vehicle = {}
        for v in vehicles:
            ego = v.box(t)
            dets = tuple(
                b for b in gt
                if b.agent_id != v.agent_id and b.center.distance_to(ego.center) <= sensor_range_m
            )
            per_vehicle[v.agent_id] = VehicleFrame(ego.center, dets)
        frames.append(Frame(k, t_us, per_vehicle, gt))
    meta = ScenarioMeta(scenario_id, dt, duration, 0, tuple(v.agent_id for v in vehicles), extra)
    return Scenario(meta, tuple(frames))


def _hidden_run(scn: Scenario, target: str, hidden_from: str, seen_by: str) -> int:
    """Longest run of frames with the target hidden (> 0.75) from one vehicle and clear (< 0.25) for another."""
    best = run = 0
    for f in scn.frames:
        ok = False
        a, b = f.vehicles.get(hidden_from), f.vehicles.get(seen_by)
        if a is not None and b is not None:
            sa = occlusion_scores(a.ego_pose, a.detections).get(target)
            sb = occlusion_scores(b.ego_pose, b.detections).get(target)
            ok = sa is not None and sb is not None and sa > 0.75 and sb < 0.25
        run = run + 1 if ok else 0
        best = max(best, run)
    return best


def occlusion_crossing(seed: int, params: Mapping[str, Any]) -> Scenario:
    """A pedestrian walks in the shadow of a parked truck as seen from v1,
    while v2 watches it from across the street.
    """
    duration = float(params.get("duration", 8.0))
    dt = float(params.get("dt", 0.1))
    n_background = int(params.get("n_background", 3))
    min_hidden_s = float(params.get("min_hidden_s", 1.0))
    sensor_range = float(params.get("sensor_range_m", 60.0))
    rng = np.random.default_rng(seed)

    for attempt in range(500):
        v1 = Mover("v1", AgentClass.CAR, 0.0, 0.0, rng.uniform(0.0, 1.0), 0.0)
        tx, ty = rng.uniform(11.0, 14.0), rng.uniform(3.0, 4.0)
        truck = Mover("truck", AgentClass.TRUCK, tx, ty, 0.0, 0.0, heading=0.0)
        bearing = math.atan2(ty, tx) + rng.uniform(-0.05, 0.05)
        r = rng.uniform(22.0, 28.0)
        px, py = r * math.cos(bearing), r * math.sin(bearing)
        walk = bearing + (math.pi if rng.random() < 0.5 else 0.0) + rng.uniform(-0.5, 0.5)
        speed = rng.uniform(1.0, 1.5)
        ped = Mover("ped", AgentClass.PEDESTRIAN, px, py, speed * math.cos(walk), speed * math.sin(walk))
        v2 = Mover("v2", AgentClass.CAR, px + rng.uniform(-4.0, 4.0), py + rng.uniform(14.0, 18.0),
                   0.0, 0.0, heading=-math.pi / 2)
        others = [truck, ped]
        for i in range(n_background):
            direction = 1.0 if rng.random() < 0.5 else -1.0
            lane_y = -3.5 if direction > 0 else -7.0
            others.append(Mover(f"car{i}", AgentClass.CAR, rng.uniform(-30.0, 40.0), lane_y,
                                direction * rng.uniform(4.0, 9.0), 0.0))
        extra = {"preset": "occlusion_crossing", "seed": seed, "attempt": attempt}
        scn = _build(f"occlusion_crossing-{seed}", [v1, v2], others, duration, dt, sensor_range, extra)
        if _hidden_run(scn, "ped", "v1", "v2") * dt >= min_hidden_s - 1e-9:
            return scn
    raise RuntimeError(f"could not satisfy the occlusion guarantee for seed {seed}")


def convoy(seed: int, params: Mapping[str, Any]) -> Scenario:
    """Two connected vehicles inside a constant-speed convoy, plus oncoming traffic."""
    duration = float(params.get("duration", 8.0))
    dt = float(params.get("dt", 0.1))
    n_convoy = int(params.get("n_convoy", 3))
    n_oncoming = int(params.get("n_oncoming", 2))
    sensor_range = float(params.get("sensor_range_m", 60.0))
    rng = np.random.default_rng(seed)
    speed = rng.uniform(8.0, 14.0)
    gap = rng.uniform(10.0, 15.0)
    slots = list(range(n_convoy + 2))
    v_slots = sorted(rng.choice(slots, size=2, replace=False).tolist())
    vehicles, others = [], []
    car_i = 0
    for s in slots:
        x0 = -s * gap
        if s in v_slots:
            vid = f"v{v_slots.index(s) + 1}"
            vehicles.append(Mover(vid, AgentClass.CAR, x0, 0.0, speed, 0.0))
        else:
            cls = AgentClass.VAN if rng.random() < 0.3 else AgentClass.CAR
            others.append(Mover(f"car{car_i}", cls, x0, 0.0, speed, 0.0))
            car_i += 1
    for i in range(n_oncoming):
        others.append(Mover(f"oncoming{i}", AgentClass.CAR, rng.uniform(20.0, 80.0), -3.5,
                            -rng.uniform(8.0, 14.0), 0.0))
    extra = {"preset": "convoy", "seed": seed}
    return _build(f"convoy-{seed}", vehicles, others, duration, dt, sensor_range, extra)


def random_traffic(seed: int, params: Mapping[str, Any]) -> Scenario:
    """Connected vehicles and mixed agents scattered in a square, all moving straight."""
    duration = float(params.get("duration", 8.0))
    dt = float(params.get("dt", 0.1))
    n_vehicles = int(params.get("n_vehicles", 2))
    n_agents = int(params.get("n_agents", 8))
    extent = float(params.get("extent_m", 60.0))
    sensor_range = float(params.get("sensor_range_m", 60.0))
    rng = np.random.default_rng(seed)
    classes = list(AgentClass)
    speeds = {AgentClass.PEDESTRIAN: (0.5, 1.6), AgentClass.CYCLIST: (2.0, 6.0)}

    def mover(agent_id: str, cls: AgentClass) -> Mover:
        lo, hi = speeds.get(cls, (0.0, 12.0))
        v = rng.uniform(lo, hi)
        h = rng.uniform(-math.pi, math.pi)
        return Mover(agent_id, cls, rng.uniform(-extent / 2, extent / 2), rng.uniform(-extent / 2, extent / 2),
                     v * math.cos(h), v * math.sin(h), heading=h)

    vehicles = [mover(f"v{i + 1}", AgentClass.CAR) for i in range(n_vehicles)]
    others = [mover(f"a{i}", classes[int(rng.integers(len(classes)))]) for i in range(n_agents)]
    extra = {"preset": "random_traffic", "seed": seed}
    return _build(f"random_traffic-{seed}", vehicles, others, duration, dt, sensor_range, extra)


_GENERATORS: dict[str, Callable[[int, Mapping[str, Any]], Scenario]] = {
    "occlusion_crossing": occlusion_crossing,
    "convoy": convoy,
    "random_traffic": random_traffic,
}


def generate_synthetic(preset: str, params: Optional[Mapping[str, Any]] = None, seed: int = 0) -> Scenario:
    try:
        gen = _GENERATORS[preset]
    except KeyError:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}") from None
    return gen(int(seed), dict(params or {}))
