"""Scenario files: line-delimited JSON, a header line followed by one line per frame."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import jsonschema

from ..core import AgentClass, BoundingBox, PredictedTrajectory, State2D, Timestamp, seconds_to_us, wrap_angle

SCENARIO_SCHEMA = "latefuse.scenario.v1"


class ValidationError(ValueError):
    """Input rejected; ``line`` is 1-based when known, ``field`` a JSON path."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None) -> None:
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("latefuse").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


@lru_cache(maxsize=None)
def _validator(name: str) -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(load_schema(name))


def validate_json(obj: Any, schema_name: str, line: Optional[int] = None) -> None:
    """Raise ``ValidationError`` for the most specific schema violation."""
    errors = list(_validator(schema_name).iter_errors(obj))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    # oneOf failures hide the useful message one level down.
    while err.context:
        err = jsonschema.exceptions.best_match(err.context)
    path = "/".join(str(p) for p in err.absolute_path) or "<root>"
    raise ValidationError(err.message, line, path)


@dataclass(frozen=True)
class ScenarioMeta:
    id: str
    dt: float
    duration: float
    t0_us: Timestamp
    vehicles: tuple[str, ...]
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def dt_us(self) -> int:
        return seconds_to_us(self.dt)


@dataclass(frozen=True)
class VehicleFrame:
    ego_pose: State2D
    detections: tuple[BoundingBox, ...]
    forecasts: dict[str, PredictedTrajectory] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class Frame:
    index: int
    t_us: Timestamp
    vehicles: dict[str, VehicleFrame]
    ground_truth: tuple[BoundingBox, ...]

    def gt_by_id(self) -> dict[str, BoundingBox]:
        return {b.agent_id: b for b in self.ground_truth}


@dataclass(frozen=True)
class Scenario:
    meta: ScenarioMeta
    frames: tuple[Frame, ...]

    @property
    def times(self) -> list[int]:
        return [f.t_us for f in self.frames]


# -- JSON <-> objects -------------------------------------------------------


def box_to_json(b: BoundingBox) -> dict:
    return {
        "id": b.agent_id,
        "cls": b.cls.value,
        "x": float(b.center.x),
        "y": float(b.center.y),
        "heading": float(b.heading),
        "length": float(b.length),
        "width": float(b.width),
        "height": float(b.height),
    }


def box_from_json(d: dict) -> BoundingBox:
    heading = wrap_angle(float(d["heading"]))
    return BoundingBox(
        State2D(float(d["x"]), float(d["y"]), heading=heading),
        float(d["length"]),
        float(d["width"]),
        float(d["height"]),
        heading,
        d["id"],
        AgentClass(d["cls"]),
    )


def pred_to_json(p: Optional[PredictedTrajectory]) -> Optional[dict]:
    if p is None:
        return None
    return {"t_us": list(p.t_us), "mean": p.mean.tolist(), "var": p.var.tolist()}


def pred_from_json(d: Optional[dict]) -> Optional[PredictedTrajectory]:
    if d is None:
        return None
    return PredictedTrajectory(tuple(d["t_us"]), d["mean"], d["var"])


def _pose_to_json(s: State2D) -> dict:
    out = {"x": float(s.x), "y": float(s.y), "heading": float(s.heading) if s.heading is not None else 0.0}
    if s.speed is not None:
        out["speed"] = float(s.speed)
    return out


def header_to_json(meta: ScenarioMeta) -> dict:
    out = {
        "type": "header",
        "schema": SCENARIO_SCHEMA,
        "id": meta.id,
        "dt": meta.dt,
        "duration": meta.duration,
        "t0_us": meta.t0_us,
        "vehicles": list(meta.vehicles),
    }
    if meta.extra:
        out["meta"] = meta.extra
    return out


def frame_to_json(f: Frame) -> dict:
    vehicles = {}
    for vid, vf in f.vehicles.items():
        v = {"ego_pose": _pose_to_json(vf.ego_pose), "detections": [box_to_json(b) for b in vf.detections]}
        if vf.forecasts:
            v["forecasts"] = [dict(agent_id=k, **pred_to_json(p)) for k, p in vf.forecasts.items()]
        vehicles[vid] = v
    return {
        "type": "frame",
        "index": f.index,
        "t_us": f.t_us,
        "vehicles": vehicles,
        "ground_truth": [box_to_json(b) for b in f.ground_truth],
    }


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_scenario(scn: Scenario, path: Union[str, Path]) -> None:
    lines = [dumps_line(header_to_json(scn.meta))]
    lines += [dumps_line(frame_to_json(f)) for f in scn.frames]
    Path(path).write_text("\n".join(lines) + "\n")


def _vehicle_frame(d: dict, line: int, vid: str) -> VehicleFrame:
    pose = d["ego_pose"]
    ego = State2D(float(pose["x"]), float(pose["y"]), wrap_angle(float(pose["heading"])), pose.get("speed"))
    dets = tuple(box_from_json(b) for b in d["detections"])
    _check_unique([b.agent_id for b in dets], line, f"vehicles/{vid}/detections")
    forecasts = {}
    for k, fc in enumerate(d.get("forecasts", [])):
        try:
            forecasts[fc["agent_id"]] = pred_from_json(fc)
        except ValueError as exc:
            raise ValidationError(str(exc), line, f"vehicles/{vid}/forecasts/{k}") from None
    return VehicleFrame(ego, dets, forecasts)


def _check_unique(ids: list[str], line: int, where: str) -> None:
    seen = set()
    for i, a in enumerate(ids):
        if a in seen:
            raise ValidationError(f"duplicate agent id {a!r}", line, f"{where}/{i}")
        seen.add(a)


def parse_scenario(lines: Iterable[str], source: str = "<scenario>") -> Scenario:
    meta = None
    frames: list[Frame] = []
    for n, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc.msg}", n) from None
        validate_json(obj, "scenario.v1", n)
        if meta is None:
            if obj["type"] != "header":
                raise ValidationError("first line must be the header", n, "type")
            meta = ScenarioMeta(
                obj["id"], float(obj["dt"]), float(obj["duration"]), int(obj["t0_us"]),
                tuple(obj["vehicles"]), obj.get("meta", {}),
            )
            continue
        if obj["type"] != "frame":
            raise ValidationError("only one header line is allowed", n, "type")
        k = len(frames)
        if obj["index"] != k:
            raise ValidationError(f"frame index {obj['index']} out of sequence, expected {k}", n, "index")
        expected = meta.t0_us + k * meta.dt_us
        if frames and obj["t_us"] <= frames[-1].t_us:
            raise ValidationError(
                f"frame {k}: timestamp {obj['t_us']} does not increase past {frames[-1].t_us}", n, "t_us"
            )
        if obj["t_us"] != expected:
            raise ValidationError(f"frame {k}: timestamp {obj['t_us']} breaks uniform dt, expected {expected}", n, "t_us")
        unknown = set(obj["vehicles"]) - set(meta.vehicles)
        if unknown:
            raise ValidationError(f"vehicles {sorted(unknown)} not declared in the header", n, "vehicles")
        gt = tuple(box_from_json(b) for b in obj["ground_truth"])
        _check_unique([b.agent_id for b in gt], n, "ground_truth")
        vehicles = {vid: _vehicle_frame(v, n, vid) for vid, v in obj["vehicles"].items()}
        frames.append(Frame(k, obj["t_us"], vehicles, gt))
    if meta is None:
        raise ValidationError(f"{source}: empty scenario file")
    if not frames:
        raise ValidationError(f"{source}: scenario has no frames")
    return Scenario(meta, tuple(frames))


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"scenario file not found: {p}")
    with p.open() as fh:
        return parse_scenario(fh, str(p))
