"""Evaluation: BEV IoU matching and ADE / FDE / MR / TSR over run logs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DEFAULT_DIMS, AgentClass, BoundingBox, State2D, wrap_angle

REPORT_COLUMNS = (
    "scenario_id", "vehicle_id", "setting", "ade_m", "fde_m", "mr", "tsr_0_5",
    "frames", "mean_msg_bytes", "p50_msg_bytes", "p95_msg_bytes",
)


class ReportError(ValueError):
    pass


# -- geometry ---------------------------------------------------------------


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the CCW convex polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=float).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    w = sp / (sp - sq)
    return (p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1]))


def iou_bev(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of the two oriented ground-plane footprints."""
    reach = math.hypot(a.length, a.width) / 2 + math.hypot(b.length, b.width) / 2
    if a.center.distance_to(b.center) > reach:
        return 0.0
    inter = polygon_area(clip_convex(a.corners(), b.corners()))
    union = a.length * a.width + b.length * b.width - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def greedy_match(
    gt: Sequence[BoundingBox], pred: Sequence[BoundingBox], iou_threshold: float = 0.5
) -> tuple[list[tuple[int, int]], list[int]]:
    """Each ground-truth box, in input order, claims its best unused prediction.

    A claim is accepted iff its IoU reaches ``iou_threshold``. Returns
    (gt index, pred index) pairs and the unmatched ground-truth indices.
    """
    used: set[int] = set()
    matches, unmatched = [], []
    for i, g in enumerate(gt):
        best_j, best = -1, -1.0
        for j, p in enumerate(pred):
            if j in used:
                continue
            v = iou_bev(g, p)
            if v > best:
                best_j, best = j, v
        if best_j >= 0 and best >= iou_threshold:
            used.add(best_j)
            matches.append((i, best_j))
        else:
            unmatched.append(i)
    return matches, unmatched


# -- per-frame metrics ------------------------------------------------------


@dataclass(frozen=True)
class FrameMetrics:
    ade: float  # nan when nothing matched
    fde: float
    mr: float
    tsr: float
    n_gt: int
    n_matched: int
    provenance: str = ""


def frame_metrics(
    matched_forecasts: Sequence[np.ndarray],
    gt_futures: Sequence[np.ndarray],
    n_gt: int,
    tsr_threshold: float = 0.5,
    provenance: str = "",
) -> Optional[FrameMetrics]:
    """Displacement errors of matched forecasts against the true futures.

    Returns None when there is no ground truth (the frame is excluded).
    """
    if len(matched_forecasts) != len(gt_futures):
        raise ValueError("forecast and ground-truth lists differ in length")
    if n_gt == 0:
        return None
    n_matched = len(matched_forecasts)
    if n_matched > n_gt:
        raise ValueError("more matches than ground-truth targets")
    if n_matched == 0:
        return FrameMetrics(math.nan, math.nan, 1.0, 0.0, n_gt, 0, provenance)
    errs = []
    for f, g in zip(matched_forecasts, gt_futures):
        f = np.asarray(f, dtype=float).reshape(-1, 2)
        g = np.asarray(g, dtype=float).reshape(-1, 2)
        if f.shape != g.shape:
            raise ValueError("forecast and truth grids differ")
        errs.append(np.hypot(*(f - g).T))
    ade = float(np.mean([e.mean() for e in errs]))
    finals = np.array([e[-1] for e in errs])
    fde = float(finals.mean())
    mr = (n_gt - n_matched) / n_gt
    tsr = int(np.count_nonzero(finals <= tsr_threshold)) / n_gt
    return FrameMetrics(ade, fde, mr, tsr, n_gt, n_matched, provenance)


@dataclass(frozen=True)
class Report:
    ade: float
    fde: float
    mr: float
    tsr: float
    frames: int
    provenance: str


def aggregate(per_frame: Sequence[Optional[FrameMetrics]]) -> Report:
    """Unweighted means over frames. ADE/FDE average only frames with matches."""
    frames = [f for f in per_frame if f is not None]
    if not frames:
        raise ReportError("no frames with ground truth to aggregate")
    tags = {f.provenance for f in frames}
    if len(tags) > 1:
        raise ReportError(f"refusing to mix run settings in one report: {sorted(tags)}")

    def mean(vals):
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    return Report(
        ade=mean([f.ade for f in frames]),
        fde=mean([f.fde for f in frames]),
        mr=float(np.mean([f.mr for f in frames])),
        tsr=float(np.mean([f.tsr for f in frames])),
        frames=len(frames),
        provenance=frames[0].provenance,
    )


def size_stats(sizes: Sequence[int]) -> dict:
    """Count, mean and quartiles of message sizes in bytes."""
    if not len(sizes):
        return {"count": 0, "mean": math.nan, "q25": math.nan, "p50": math.nan, "q75": math.nan, "p95": math.nan}
    a = np.asarray(sizes, dtype=float)
    q25, p50, q75, p95 = np.percentile(a, [25, 50, 75, 95])
    return {"count": int(a.size), "mean": float(a.mean()), "q25": float(q25), "p50": float(p50),
            "q75": float(q75), "p95": float(p95)}


# -- run-log evaluation -----------------------------------------------------


def _entry_box(e: dict, forecast: dict) -> BoundingBox:
    x, y = e["state"]
    cls = AgentClass(e["cls"])
    if e.get("box"):
        l, w, h, heading = e["box"]
    else:
        # Peer-only targets have no observed box: class-default footprint,
        # oriented along the forecast when it moves.
        l, w, h = DEFAULT_DIMS[cls]
        m = forecast["mean"]
        dx, dy = m[0][0] - x, m[0][1] - y
        heading = math.atan2(dy, dx) if math.hypot(dx, dy) > 0.05 else 0.0
    heading = wrap_angle(heading)
    return BoundingBox(State2D(x, y), l, w, h, heading, e["id"], cls)


def evaluate_vehicle_frames(
    runlog,
    scenario,
    vehicle_id: str,
    iou_threshold: float = 0.5,
    tsr_threshold: float = 0.5,
    eval_radius_m: float = 50.0,
) -> list[FrameMetrics]:
    """Per-frame metrics for one vehicle of a run.

    Ground truth is every scenario agent other than the vehicle itself within
    ``eval_radius_m`` of its pose whose true position is known at every
    forecast time. Each entry contributes its fused forecast (local when no
    fused one exists).
    """
    step = runlog.header["step_us"]
    horizon = runlog.header["horizon_us"]
    offsets = range(step, horizon + 1, step)
    by_time = {f.t_us: f for f in scenario.frames}
    gt_cache: dict[int, dict[str, BoundingBox]] = {}

    def gt_at(t: int) -> Optional[dict[str, BoundingBox]]:
        if t not in gt_cache:
            f = by_time.get(t)
            gt_cache[t] = f.gt_by_id() if f is not None else None
        return gt_cache[t]

    prov = runlog.header["provenance"]
    out = []
    for rec in runlog.records:
        if rec["vehicle"] != vehicle_id:
            continue
        t = rec["t_us"]
        frame = by_time.get(t)
        if frame is None:
            raise ReportError(f"run log time {t} not in scenario {scenario.meta.id}")
        ego = State2D(*rec["ego"])
        futures = [gt_at(t + o) for o in offsets]
        if any(fu is None for fu in futures):
            continue
        gts, gt_future = [], []
        for b in frame.ground_truth:
            if b.agent_id == vehicle_id or b.center.distance_to(ego) > eval_radius_m:
                continue
            if not all(b.agent_id in fu for fu in futures):
                continue
            gts.append(b)
            gt_future.append(np.array([[fu[b.agent_id].center.x, fu[b.agent_id].center.y] for fu in futures]))
        preds, forecasts = [], []
        for e in rec["entries"]:
            fc = e["fused"] if e["fused"] is not None else e["local"]
            if fc is None:
                continue
            if list(fc["t_us"]) != [t + o for o in offsets]:
                raise ReportError(f"{vehicle_id} t={t}: entry {e['id']} forecast is off the evaluation grid")
            preds.append(_entry_box(e, fc))
            forecasts.append(np.asarray(fc["mean"], dtype=float))
        matches, _ = greedy_match(gts, preds, iou_threshold)
        fm = frame_metrics(
            [forecasts[j] for _, j in matches],
            [gt_future[i] for i, _ in matches],
            len(gts),
            tsr_threshold,
            prov,
        )
        if fm is not None:
            out.append(fm)
    return out


@dataclass(frozen=True)
class ReportRow:
    scenario_id: str
    vehicle_id: str
    setting: str
    ade_m: float
    fde_m: float
    mr: float
    tsr_0_5: float
    frames: int
    mean_msg_bytes: float
    p50_msg_bytes: float
    p95_msg_bytes: float


def evaluate_run(runlog, scenario, **kw) -> tuple[list[ReportRow], dict]:
    """Report rows per vehicle plus a JSON-ready summary with size distributions."""
    if runlog.header["scenario_id"] != scenario.meta.id:
        raise ReportError(
            f"run log is for scenario {runlog.header['scenario_id']!r}, not {scenario.meta.id!r}"
        )
    rows, sizes_by_vehicle = [], {}
    for vid in runlog.header["vehicles"]:
        rep = aggregate(evaluate_vehicle_frames(runlog, scenario, vid, **kw))
        sizes = [s["bytes"] for r in runlog.records if r["vehicle"] == vid for s in r["sent"]]
        st = size_stats(sizes)
        sizes_by_vehicle[vid] = st
        rows.append(ReportRow(scenario.meta.id, vid, rep.provenance, rep.ade, rep.fde, rep.mr, rep.tsr,
                              rep.frames, st["mean"], st["p50"], st["p95"]))
    summary = {
        "scenario_id": scenario.meta.id,
        "setting": runlog.header["setting"],
        "provenance": runlog.header["provenance"],
        "rows": [asdict(r) for r in rows],
        "scenario": scenario_summary(rows),
        "message_bytes": sizes_by_vehicle,
    }
    return rows, summary


def scenario_summary(rows: Sequence[ReportRow]) -> dict:
    """Mean over vehicles of each metric."""
    def mean(vals):
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    return {
        "ade_m": mean([r.ade_m for r in rows]),
        "fde_m": mean([r.fde_m for r in rows]),
        "mr": mean([r.mr for r in rows]),
        "tsr_0_5": mean([r.tsr_0_5 for r in rows]),
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def summary_to_json(summary: dict) -> str:
    def clean(o):
        if isinstance(o, float) and math.isnan(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, list):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(summary), indent=2, sort_keys=True) + "\n"
