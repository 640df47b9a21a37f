"""Per-vehicle run configuration and its JSON overlay."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from ..collab import CollabConfig
from ..comms import ChannelParams
from ..fusion import GateConfig
from ..occlusion import OcclusionConfig
from ..predictor import PredictorConfig
from ..tracker import GT_ID, HUNGARIAN_NIS, Gates, TrackerConfig
from .scenario import ValidationError, validate_json

CONFIG_SCHEMA = "latefuse.config.v1"


@dataclass(frozen=True)
class VehicleConfig:
    vehicle_id: str
    fps: float = 10.0
    broadcast_hz: float = 10.0
    broadcast: bool = True
    aggregate: bool = True
    # Controlled perception: occlusion filtering and ground-truth-id association.
    # Otherwise detections are used as given with Hungarian/NIS association.
    controlled: bool = True
    occlusion_enabled: bool = True
    eval_radius_m: float = 50.0
    # Shares this close to the ego pose describe the ego itself.
    self_exclusion_m: float = 2.5
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    collab: CollabConfig = field(default_factory=CollabConfig)

    def __post_init__(self) -> None:
        if not 0 < self.broadcast_hz <= 10:
            raise ValueError(f"{self.vehicle_id}: broadcast_hz must lie in (0, 10]")
        if not self.fps > 0:
            raise ValueError(f"{self.vehicle_id}: fps must be positive")
        want = GT_ID if self.controlled else HUNGARIAN_NIS
        if self.tracker.mode != want:
            object.__setattr__(self, "tracker", replace(self.tracker, mode=want))


@dataclass(frozen=True)
class RunConfig:
    vehicles: dict[str, VehicleConfig]
    channel: ChannelParams = field(default_factory=ChannelParams)


def _vehicle_from_dict(vid: str, d: Mapping[str, Any]) -> VehicleConfig:
    top = {k: d[k] for k in ("fps", "broadcast_hz", "broadcast", "aggregate", "controlled",
                              "occlusion_enabled", "eval_radius_m", "self_exclusion_m") if k in d}
    tr = dict(d.get("tracker", {}))
    gate_keys = ("euclid_confirmed_m", "euclid_tentative_m", "vehicle_scale", "nis_max")
    gates = Gates(**{k: tr.pop(k) for k in gate_keys if k in tr})
    controlled = top.get("controlled", True)
    return VehicleConfig(
        vehicle_id=vid,
        predictor=PredictorConfig(**d.get("predictor", {})),
        tracker=TrackerConfig(mode=GT_ID if controlled else HUNGARIAN_NIS, gates=gates, **tr),
        occlusion=OcclusionConfig(**d.get("occlusion", {})),
        gate=GateConfig(**d.get("gate", {})),
        collab=CollabConfig(**d.get("collab", {})),
        **top,
    )


def _merge(base: Mapping[str, Any], over: Mapping[str, Any]) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, Mapping) and isinstance(out.get(k), Mapping) else v
    return out


def run_config_from_dict(d: Mapping[str, Any], vehicle_ids: Optional[list[str]] = None) -> RunConfig:
    """Build per-vehicle configs; ``defaults`` applies to all, ``vehicles`` overrides."""
    validate_json(d, "config.v1")
    defaults = d.get("defaults", {})
    per = d.get("vehicles", {})
    ids = list(vehicle_ids) if vehicle_ids is not None else sorted(per)
    unknown = set(per) - set(ids)
    if unknown:
        raise ValidationError(f"config names vehicles {sorted(unknown)} absent from the scenario", field="vehicles")
    try:
        vehicles = {vid: _vehicle_from_dict(vid, _merge(defaults, per.get(vid, {}))) for vid in ids}
        channel = ChannelParams(**d.get("channel", {}))
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None
    return RunConfig(vehicles, channel)


def load_run_config(path: Union[str, Path], vehicle_ids: Optional[list[str]] = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON: {exc.msg}", exc.lineno) from None
    return run_config_from_dict(d, vehicle_ids)


def default_run_config(vehicle_ids: list[str]) -> RunConfig:
    return RunConfig({vid: VehicleConfig(vid) for vid in vehicle_ids})
