"""Simulated V2X broadcast channel: size-dependent delay and drop, per-receiver mailboxes."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Optional

import numpy as np

from ..core import Timestamp


@dataclass(frozen=True)
class ChannelParams:
    k_ms_per_byte: float = 0.0197
    mu: float = 3.135  # log-ms
    sigma: float = 0.182
    # (upper size bound in bytes, drop probability); larger packets use drop_above.
    drop_tiers: tuple[tuple[int, float], ...] = ((400, 0.0), (900, 0.08))
    drop_above: float = 0.10
    delay_enabled: bool = True
    drop_enabled: bool = True

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for _, p in self.drop_tiers:
            if not 0.0 <= p <= 1.0:
                raise ValueError("drop probabilities must lie in [0, 1]")
        if not 0.0 <= self.drop_above <= 1.0:
            raise ValueError("drop probabilities must lie in [0, 1]")


def p_drop(size_bytes: int, params: ChannelParams) -> float:
    for bound, p in params.drop_tiers:
        if size_bytes <= bound:
            return p
    return params.drop_above


def delay_quantile(q: float, size_bytes: int, params: ChannelParams) -> float:
    """Analytic quantile (ms) of the shifted log-normal delay."""
    z = NormalDist().inv_cdf(q)
    return params.k_ms_per_byte * size_bytes + math.exp(params.mu + params.sigma * z)


@dataclass(frozen=True)
class Outcome:
    dropped: bool
    delay_ms: Optional[float] = None


def channel_sample(size_bytes: int, params: ChannelParams, rng: np.random.Generator) -> Outcome:
    """One packet's fate.

    Both random draws happen regardless of which impairments are enabled, so
    toggling delay or drop leaves the rest of the random stream untouched.
    """
    if size_bytes < 1:
        raise ValueError("size_bytes must be >= 1")
    u = rng.random()
    z = rng.standard_normal()
    if params.drop_enabled and u < p_drop(size_bytes, params):
        return Outcome(True)
    if not params.delay_enabled:
        return Outcome(False, 0.0)
    return Outcome(False, params.k_ms_per_byte * size_bytes + math.exp(params.mu + params.sigma * z))


class Bus:
    """In-process broadcast bus with one mailbox per receiver.

    Messages become visible to a receiver once ``now >= arrival``; ties in
    arrival time are broken by publish order.
    """

    def __init__(self, params: ChannelParams, seed: int = 0, receivers: Iterable[int] = ()) -> None:
        self.params = params
        self.rng = np.random.default_rng(seed)
        self._seq = 0
        self._boxes: dict[int, list[tuple[int, int, bytes]]] = {}
        for r in receivers:
            self.register(r)

    def register(self, receiver: int) -> None:
        self._boxes.setdefault(receiver, [])

    @property
    def receivers(self) -> list[int]:
        return sorted(self._boxes)

    def publish(self, sender: int, data: bytes, send_time: Timestamp) -> dict[int, Outcome]:
        """Sample one independent channel outcome per receiver other than the sender."""
        outcomes = {}
        for r in self.receivers:
            if r == sender:
                continue
            out = channel_sample(len(data), self.params, self.rng)
            outcomes[r] = out
            if not out.dropped:
                arrival = send_time + int(round(out.delay_ms * 1000.0))
                heapq.heappush(self._boxes[r], (arrival, self._seq, data))
            self._seq += 1
        return outcomes

    def poll(self, receiver: int, now: Timestamp) -> list[tuple[bytes, Timestamp]]:
        box = self._boxes.setdefault(receiver, [])
        out = []
        while box and box[0][0] <= now:
            arrival, _, data = heapq.heappop(box)
            out.append((data, arrival))
        return out

    def pending(self, receiver: int) -> int:
        return len(self._boxes.get(receiver, ()))
