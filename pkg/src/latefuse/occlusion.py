"""Casting-ray occlusion scores for BEV boxes seen from an ego position."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import BoundingBox, State2D

ENDPOINTS = "endpoints"
MIDPOINTS = "midpoints"


@dataclass(frozen=True)
class OcclusionConfig:
    n_rays: int = 21
    discard_threshold: float = 0.75
    # "endpoints": rays span [theta_L, theta_R] inclusive;
    # "midpoints": rays at the centers of n equal sub-arcs.
    sampling: str = MIDPOINTS

    def __post_init__(self) -> None:
        if self.n_rays < 2:
            raise ValueError("n_rays must be >= 2")
        if not 0.0 <= self.discard_threshold <= 1.0:
            raise ValueError("discard_threshold must lie in [0, 1]")
        if self.sampling not in (ENDPOINTS, MIDPOINTS):
            raise ValueError(f"unknown ray sampling {self.sampling!r}")


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def angular_span(ego: State2D, box: BoundingBox) -> tuple[float, float, float]:
    """(center direction, min offset, max offset) of the box corners seen from ego.

    Offsets are relative to the ego-to-center bearing, which keeps the span
    free of the +/-pi branch cut.
    """
    corners = box.corners()
    phi = math.atan2(box.center.y - ego.y, box.center.x - ego.x)
    rel = _wrap(np.arctan2(corners[:, 1] - ego.y, corners[:, 0] - ego.x) - phi)
    return phi, float(rel.min()), float(rel.max())


def ray_angles(ego: State2D, box: BoundingBox, n_rays: int, sampling: str = MIDPOINTS) -> np.ndarray:
    phi, lo, hi = angular_span(ego, box)
    if sampling == MIDPOINTS:
        frac = (np.arange(n_rays) + 0.5) / n_rays
    else:
        frac = np.linspace(0.0, 1.0, n_rays)
    return phi + lo + frac * (hi - lo)


def occlusion_scores(
    ego: State2D,
    boxes: Sequence[BoundingBox],
    n_rays: int = 21,
    sampling: str = MIDPOINTS,
) -> dict[str, float]:
    """Fraction of each box's rays blocked by a closer, tall-enough box."""
    if n_rays < 2:
        raise ValueError("n_rays must be >= 2")
    boxes = list(boxes)
    inside = [b.contains(ego.x, ego.y) for b in boxes]
    dist = [math.hypot(b.center.x - ego.x, b.center.y - ego.y) for b in boxes]
    spans = [None if ins else angular_span(ego, b) for b, ins in zip(boxes, inside)]

    scores: dict[str, float] = {}
    for m, target in enumerate(boxes):
        if inside[m]:
            scores[target.agent_id] = 0.0
            continue
        d_m = dist[m]
        thetas = ray_angles(ego, target, n_rays, sampling)
        occluded = np.zeros(n_rays, dtype=bool)
        for o, other in enumerate(boxes):
            if o == m or inside[o]:
                continue
            d_o = dist[o]
            if not (d_o < d_m and other.height >= target.height * (d_o / d_m)):
                continue
            phi, lo, hi = spans[o]
            rel = _wrap(thetas - phi)
            occluded |= (rel >= lo) & (rel <= hi)
        scores[target.agent_id] = int(occluded.sum()) / n_rays
    return scores


def filter_visible(
    boxes: Sequence[BoundingBox], scores: Mapping[str, float], threshold: float = 0.75
) -> list[BoundingBox]:
    """Keep boxes whose occlusion score does not exceed ``threshold``."""
    return [b for b in boxes if scores[b.agent_id] <= threshold]
