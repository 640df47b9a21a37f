import math

import numpy as np
import pytest
from shapely.geometry import Polygon

from latefuse.core import AgentClass, BoundingBox, State2D
from latefuse.metrics import (
    FrameMetrics,
    ReportError,
    aggregate,
    frame_metrics,
    greedy_match,
    iou_bev,
    size_stats,
)
from conftest import make_box


def unit(x, y, heading=0.0, aid="b"):
    return BoundingBox(State2D(x, y), 1.0, 1.0, 1.0, heading, aid, AgentClass.CAR)


def test_iou_examples():
    assert iou_bev(unit(0, 0), unit(0, 0)) == pytest.approx(1.0)
    assert iou_bev(unit(0, 0), unit(5, 0)) == 0.0
    assert abs(iou_bev(unit(0, 0), unit(0.5, 0)) - 1 / 3) <= 1e-9


def test_iou_matches_shapely():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = make_box("a", *rng.uniform(-2, 2, 2), length=rng.uniform(0.5, 5), width=rng.uniform(0.5, 3),
                     heading=rng.uniform(-math.pi, math.pi))
        b = make_box("b", *rng.uniform(-2, 2, 2), length=rng.uniform(0.5, 5), width=rng.uniform(0.5, 3),
                     heading=rng.uniform(-math.pi, math.pi))
        pa, pb = Polygon(a.corners()), Polygon(b.corners())
        oracle = pa.intersection(pb).area / pa.union(pb).area
        assert iou_bev(a, b) == pytest.approx(oracle, abs=1e-9)


def test_greedy_examples():
    boxes = [unit(0, 0, aid="p"), unit(3, 0, aid="q")]
    assert greedy_match(boxes, boxes, 0.5) == ([(0, 0), (1, 1)], [])
    weak = unit(0.7, 0)  # IoU 0.3/1.7 with the unit box at the origin
    assert greedy_match([unit(0, 0)], [weak], 0.5) == ([], [0])


def test_greedy_order_dependence():
    g1, g2 = unit(0, 0, aid="g1"), unit(0.2, 0, aid="g2")
    pred = [unit(0.1, 0, aid="p")]
    assert greedy_match([g1, g2], pred, 0.5) == ([(0, 0)], [1])
    assert greedy_match([g2, g1], pred, 0.5) == ([(0, 0)], [1])


def test_frame_metric_examples():
    f = np.array([[1.0, 0.0], [2.0, 0.0]])
    perfect = frame_metrics([f, f], [f, f], 2)
    assert (perfect.ade, perfect.fde, perfect.mr, perfect.tsr) == (0.0, 0.0, 0.0, 1.0)
    three = frame_metrics([f] * 3, [f] * 3, 4)
    assert three.mr == 0.25
    g1 = f + [[0, 0], [0.49, 0]]
    g2 = f + [[0, 0], [0.51, 0]]
    assert frame_metrics([f, f], [g1, g2], 2, 0.5).tsr == 0.5
    assert frame_metrics([], [], 0) is None
    none = frame_metrics([], [], 3)
    assert none.mr == 1.0 and none.tsr == 0.0 and math.isnan(none.ade)


def test_metric_identities():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n_gt = int(rng.integers(1, 8))
        n_m = int(rng.integers(0, n_gt + 1))
        fc = [rng.normal(size=(5, 2)) for _ in range(n_m)]
        gt = [x + rng.normal(scale=0.4, size=(5, 2)) for x in fc]
        m = frame_metrics(fc, gt, n_gt)
        assert m.mr + m.n_matched / n_gt == pytest.approx(1.0)
        assert m.tsr <= 1 - m.mr + 1e-12


def test_aggregate():
    a = FrameMetrics(1.0, 2.0, 0.0, 1.0, 2, 2)
    assert aggregate([a]) == aggregate([a, None])
    r = aggregate([a, FrameMetrics(3.0, 4.0, 0.5, 0.5, 2, 1)])
    assert (r.ade, r.fde, r.mr, r.tsr, r.frames) == (2.0, 3.0, 0.25, 0.75, 2)
    with pytest.raises(ReportError):
        aggregate([])
    with pytest.raises(ReportError):
        aggregate([FrameMetrics(1, 1, 0, 1, 1, 1, "fusion=on"), FrameMetrics(1, 1, 0, 1, 1, 1, "fusion=off")])


def test_size_stats():
    s = size_stats([100, 200, 300])
    assert s["count"] == 3 and s["mean"] == 200.0 and s["p50"] == 200.0
    assert math.isnan(size_stats([])["mean"])
