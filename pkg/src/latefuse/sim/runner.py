"""Shared-clock simulation loop: perceive, predict, exchange, fuse, log."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..collab import (
    L,
    LocalPrediction,
    PredictionMap,
    Share,
    spatial_match,
    temporal_align,
    update_from_association,
    update_from_predictor,
)
from ..comms import AgentForecast, BudgetError, Bus, CodecError, decode, encode
from ..core import PredictedTrajectory, State2D, seconds_to_us
from ..fusion import GpNumericError, fuse_map
from ..occlusion import filter_visible, occlusion_scores
from ..predictor import predict
from ..tracker import NumericError, Tracker, gate_stats
from .config import RunConfig, VehicleConfig, default_run_config
from .scenario import Scenario, ValidationError, dumps_line, pred_to_json, validate_json

log = logging.getLogger(__name__)

RUNLOG_SCHEMA = "latefuse.runlog.v1"


@dataclass(frozen=True)
class GlobalSettings:
    fusion: bool = True
    delay: bool = True
    drop: bool = True
    seed: int = 0

    @property
    def provenance(self) -> str:
        def onoff(b: bool) -> str:
            return "on" if b else "off"

        return f"fusion={onoff(self.fusion)},delay={onoff(self.delay)},drop={onoff(self.drop)}"


@dataclass
class RunLog:
    header: dict
    records: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [dumps_line(self.header)] + [dumps_line(r) for r in self.records]

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    @property
    def provenance(self) -> str:
        return self.header["provenance"]

    @classmethod
    def load(cls, path: Union[str, Path], validate: bool = True) -> "RunLog":
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"run log not found: {p}")
        header, records = None, []
        with p.open() as fh:
            for n, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"invalid JSON: {exc.msg}", n) from None
                if validate:
                    validate_json(obj, "runlog.v1", n)
                if header is None:
                    if obj.get("type") != "header":
                        raise ValidationError("first line must be the header", n, "type")
                    header = obj
                else:
                    records.append(obj)
        if header is None:
            raise ValidationError(f"{p}: empty run log")
        return cls(header, records)


class _Vehicle:
    def __init__(self, vid: str, sender_id: int, cfg: VehicleConfig) -> None:
        self.vid = vid
        self.sender_id = sender_id
        self.cfg = cfg
        self.tracker = Tracker(cfg.tracker)
        self.pmap = PredictionMap()


def _with_current(msg_time: int, a: AgentForecast) -> PredictedTrajectory:
    """Shared forecast with the sender's current estimate as a leading sample."""
    p = a.pred
    if len(p) and p.t_us[0] <= msg_time:
        return p
    var0 = p.var[:1] if len(p) else np.full((1, 2), 1e-3)
    return PredictedTrajectory(
        (msg_time,) + p.t_us,
        np.vstack([[a.current.x, a.current.y], p.mean]),
        np.vstack([var0, p.var]),
    )


def _entry_json(e, pooled: int, box: Optional[list]) -> dict:
    return {
        "id": e.agent_id,
        "category": e.category,
        "cls": e.cls.value,
        "state": [e.current_state.x, e.current_state.y],
        "t_us": e.t_us,
        "box": box,
        "pooled": pooled,
        "local": pred_to_json(e.local_pred),
        "fused": pred_to_json(e.fused_pred),
    }


def run(
    scenario: Scenario,
    run_cfg: Optional[RunConfig] = None,
    settings: GlobalSettings = GlobalSettings(),
    timings: Optional[list] = None,
) -> RunLog:
    """Replay a scenario for every vehicle on one shared clock.

    Vehicles are advanced sequentially in header order. Wall-clock timings,
    when requested, go to ``timings`` so the log itself stays deterministic.
    """
    meta = scenario.meta
    run_cfg = run_cfg or default_run_config(list(meta.vehicles))
    missing = [v for v in meta.vehicles if v not in run_cfg.vehicles]
    if missing:
        raise ValidationError(f"no configuration for vehicles {missing}")
    frame_rate = 1.0 / meta.dt
    cadence: dict[str, int] = {}
    bperiod: dict[str, int] = {}
    for vid in meta.vehicles:
        cfg = run_cfg.vehicles[vid]
        every = frame_rate / cfg.fps
        if abs(every - round(every)) > 1e-9 or round(every) < 1:
            raise ValidationError(f"{vid}: fps {cfg.fps} incompatible with scenario dt {meta.dt}")
        cadence[vid] = int(round(every))
        bperiod[vid] = seconds_to_us(1.0 / cfg.broadcast_hz)

    channel = replace(run_cfg.channel, delay_enabled=settings.delay, drop_enabled=settings.drop)
    vehicles = [_Vehicle(vid, i + 1, run_cfg.vehicles[vid]) for i, vid in enumerate(meta.vehicles)]
    names = {v.sender_id: v.vid for v in vehicles}
    bus = Bus(channel, seed=settings.seed, receivers=names)

    first = vehicles[0].cfg.predictor
    header = {
        "type": "header",
        "schema": RUNLOG_SCHEMA,
        "scenario_id": meta.id,
        "setting": {"fusion": settings.fusion, "delay": settings.delay, "drop": settings.drop, "seed": settings.seed},
        "provenance": settings.provenance,
        "vehicles": list(meta.vehicles),
        "horizon_us": first.horizon_us,
        "step_us": first.step_us,
    }
    runlog = RunLog(header)

    for frame in scenario.frames:
        for veh in vehicles:
            vf = frame.vehicles.get(veh.vid)
            if vf is None or frame.index % cadence[veh.vid] != 0:
                continue
            clock = _Clock() if timings is not None else None
            rec = _step_vehicle(veh, frame, vf, bus, names, settings, bperiod[veh.vid], meta.t0_us, clock)
            runlog.records.append(rec)
            if clock is not None:
                timings.append({"frame": frame.index, "vehicle": veh.vid, **clock.spans})
    return runlog


class _Clock:
    def __init__(self) -> None:
        self.spans: dict[str, float] = {}
        self._t = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.spans[name] = round((now - self._t) * 1e3, 3)
        self._t = now


def _step_vehicle(veh: _Vehicle, frame, vf, bus: Bus, names, settings: GlobalSettings,
                  bperiod_us: int, t0_us: int, clock: Optional[_Clock]) -> dict:
    cfg = veh.cfg
    t = frame.t_us
    ego = vf.ego_pose
    errors: list[str] = []
    lap = clock.lap if clock is not None else (lambda name: None)

    # Perception and local prediction.
    dets = list(vf.detections)
    if cfg.controlled and cfg.occlusion_enabled:
        occ = cfg.occlusion
        scores = occlusion_scores(ego, dets, occ.n_rays, occ.sampling)
        dets = filter_visible(dets, scores, occ.discard_threshold)
    try:
        tracks = veh.tracker.step(dets, t)
    except NumericError as exc:
        errors.append(f"tracker: {exc}")
        tracks = veh.tracker.tracks
    lap("track")

    local_preds = []
    boxes = {}
    for trk in tracks:
        if not trk.confirmed:
            continue
        st = trk.state()
        pred = vf.forecasts.get(trk.track_id) or predict(trk.history_trajectory(), st, cfg.predictor, t)
        local_preds.append(LocalPrediction(trk.track_id, trk.cls, st, t, pred))
        l, w, h = trk.box_dims
        boxes[trk.track_id] = [l, w, h, trk.heading]
    update_from_predictor(veh.pmap, local_preds, cfg.collab)
    lap("predict")

    # Listen.
    received = []
    if settings.fusion and cfg.aggregate:
        for data, arrival in bus.poll(veh.sender_id, t):
            try:
                msg = decode(data)
            except CodecError as exc:
                errors.append(f"decode: {exc}")
                continue
            shares = []
            for idx, a in enumerate(msg.agents):
                aligned = temporal_align(_with_current(msg.gps_time, a), t)
                if aligned is None:
                    continue
                state, traj = aligned
                if state.distance_to(ego) <= cfg.self_exclusion_m:
                    continue
                shares.append(Share(msg.sender_id, idx, a.cls, state, traj.t_us[0], traj))
            M, U = spatial_match(veh.pmap, shares, cfg.collab.promote_gate_m)
            update_from_association(veh.pmap, M, U, cfg.collab, ego)
            received.append({"from": names.get(msg.sender_id, str(msg.sender_id)), "bytes": len(data),
                             "arrival_us": arrival, "shares": len(shares), "matched": len(M)})
    lap("listen")

    # Fuse.
    pooled = {e.agent_id: len(e.pool) for e in veh.pmap}
    if settings.fusion:
        stats = {trk.track_id: gate_stats(trk) for trk in tracks}
        try:
            fuse_map(veh.pmap, cfg.predictor.query_times(t), cfg.gate, stats)
        except (GpNumericError, ValueError) as exc:
            errors.append(f"fusion: {exc}")
            for e in veh.pmap:
                e.fused_pred = e.local_pred
                e.pool.clear()
    else:
        for e in veh.pmap:
            e.fused_pred = e.local_pred if e.category == L else None
            e.pool.clear()
    lap("fuse")

    # Broadcast local (unfused) forecasts.
    sent = []
    if cfg.broadcast and (t - t0_us) % bperiod_us == 0:
        encoded = _encode_within_budget(veh, t, ego, local_preds, errors)
        if encoded is not None:
            frame_bytes, n_agents = encoded
            outcomes = bus.publish(veh.sender_id, frame_bytes, t)
            sent.append({
                "bytes": len(frame_bytes),
                "n_agents": n_agents,
                "outcomes": {names[r]: (None if o.dropped else o.delay_ms) for r, o in outcomes.items()},
            })
    lap("broadcast")

    rec = {
        "type": "vehicle_frame",
        "frame": frame.index,
        "t_us": t,
        "vehicle": veh.vid,
        "ego": [ego.x, ego.y],
        "entries": [_entry_json(e, pooled.get(e.agent_id, 0), boxes.get(e.agent_id)) for e in veh.pmap],
        "sent": sent,
        "received": received,
    }
    if errors:
        rec["errors"] = errors
        for msg in errors:
            log.warning("%s t=%d: %s", veh.vid, t, msg)
    return rec


def _encode_within_budget(veh: _Vehicle, t: int, ego: State2D, local_preds, errors) -> Optional[tuple[bytes, int]]:
    """Encode nearest-first, shedding the farthest agents until the frame fits."""
    agents = sorted(local_preds, key=lambda p: (p.state.distance_to(ego), p.track_id))
    forecasts = [AgentForecast(p.cls, State2D(p.state.x, p.state.y), p.pred) for p in agents]
    anchor = (ego.x, ego.y)
    while True:
        try:
            return encode(veh.sender_id, t, forecasts, anchor=anchor), len(forecasts)
        except BudgetError:
            if not forecasts:
                errors.append("encode: empty message exceeds budget")
                return None
            forecasts.pop()
        except CodecError as exc:
            errors.append(f"encode: {exc}")
            bad = getattr(exc, "agent_index", None)
            if bad is None:
                return None
            forecasts.pop(bad)
