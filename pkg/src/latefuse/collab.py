"""Per-vehicle prediction map and the two map-update algorithms.

Entries come in two categories: ``L`` for targets the vehicle tracks itself
and ``S`` for targets known only from peers' shared forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import AgentClass, PredictedTrajectory, State2D, Timestamp

L = "L"
S = "S"


@dataclass(frozen=True)
class CollabConfig:
    promote_gate_m: float = 2.0
    relevance_radius_m: float = 75.0
    stale_S_steps: int = 2

    def __post_init__(self) -> None:
        if not (self.promote_gate_m > 0 and self.relevance_radius_m > 0 and self.stale_S_steps > 0):
            raise ValueError("collaboration thresholds must be positive")


@dataclass
class MapEntry:
    category: str
    agent_id: str
    current_state: State2D
    t_us: Timestamp  # time at which current_state holds
    cls: AgentClass = AgentClass.CAR
    local_pred: Optional[PredictedTrajectory] = None
    fused_pred: Optional[PredictedTrajectory] = None
    pool: list[PredictedTrajectory] = field(default_factory=list)
    unmatched_steps: int = 0

    def forecast(self) -> Optional[PredictedTrajectory]:
        """Best available forecast: fused if present, else local."""
        return self.fused_pred if self.fused_pred is not None else self.local_pred


@dataclass(frozen=True)
class LocalPrediction:
    track_id: str
    cls: AgentClass
    state: State2D
    t_us: Timestamp
    pred: PredictedTrajectory


@dataclass(frozen=True)
class Share:
    """One agent's forecast from a peer message, after temporal alignment."""

    sender: int
    index: int  # position of the agent within the sender's message
    cls: AgentClass
    state: State2D
    t_us: Timestamp
    pred: PredictedTrajectory


class PredictionMap:
    """Ordered map of entries keyed by agent id."""

    def __init__(self) -> None:
        self._entries: dict[str, MapEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[MapEntry]:
        return iter(list(self._entries.values()))

    def __contains__(self, agent_id: str) -> bool:
        return agent_id in self._entries

    def __getitem__(self, agent_id: str) -> MapEntry:
        return self._entries[agent_id]

    def get(self, agent_id: str) -> Optional[MapEntry]:
        return self._entries.get(agent_id)

    def add(self, entry: MapEntry) -> None:
        if entry.agent_id in self._entries:
            raise KeyError(f"duplicate map entry {entry.agent_id!r}")
        self._entries[entry.agent_id] = entry

    def replace_all(self, entries: Sequence[MapEntry]) -> None:
        self._entries = {}
        for e in entries:
            self.add(e)

    def ids(self, category: Optional[str] = None) -> list[str]:
        return [e.agent_id for e in self._entries.values() if category is None or e.category == category]


def temporal_align(
    shared: PredictedTrajectory, ego_pred_time: Timestamp
) -> Optional[tuple[State2D, PredictedTrajectory]]:
    """Drop samples older than ``ego_pred_time``.

    Returns the first remaining sample as the current state plus the
    remaining samples, which keep their absolute timestamps; None when the
    whole share is stale.
    """
    if len(shared) == 0:
        raise ValueError("shared trajectory is empty")
    keep = [i for i, t in enumerate(shared.t_us) if t >= ego_pred_time]
    if not keep:
        return None
    i0 = keep[0]
    aligned = PredictedTrajectory(shared.t_us[i0:], shared.mean[i0:], shared.var[i0:])
    m = aligned.mean[0]
    return State2D(float(m[0]), float(m[1])), aligned


def _greedy_pairs(dist: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Globally-nearest-first one-to-one pairing under a distance gate."""
    rows, cols = np.nonzero(dist <= gate)
    order = sorted(zip(dist[rows, cols], rows, cols))
    used_r, used_c, pairs = set(), set(), []
    for _, r, c in order:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((int(r), int(c)))
    return pairs


def _distances(a: Sequence[State2D], b: Sequence[State2D]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    pa = np.array([[s.x, s.y] for s in a])
    pb = np.array([[s.x, s.y] for s in b])
    return np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])


def spatial_match(
    pmap: PredictionMap, shares: Sequence[Share], gate_m: float = 2.0
) -> tuple[list[tuple[str, Share]], list[Share]]:
    """Greedy nearest-neighbour matching of shares to map entries."""
    entries = list(pmap)
    dist = _distances([e.current_state for e in entries], [s.state for s in shares])
    pairs = _greedy_pairs(dist, gate_m)
    matched = sorted(pairs, key=lambda p: p[1])
    taken = {c for _, c in pairs}
    M = [(entries[r].agent_id, shares[c]) for r, c in matched]
    U = [s for c, s in enumerate(shares) if c not in taken]
    return M, U


def update_from_predictor(
    pmap: PredictionMap, local_preds: Sequence[LocalPrediction], cfg: CollabConfig
) -> PredictionMap:
    """Refresh the map from this vehicle's own forecasts.

    Id-matched L entries are refreshed, remaining forecasts promote the
    nearest S entry inside the gate (keeping its pool), vanished L entries
    and stale S entries are dropped, and leftovers become new L entries.
    """
    ids = [p.track_id for p in local_preds]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate track ids in local predictions")
    by_id = {p.track_id: p for p in local_preds}

    kept: list[MapEntry] = []
    refreshed: set[str] = set()
    s_entries: list[MapEntry] = []
    for e in pmap:
        if e.category == L:
            p = by_id.get(e.agent_id)
            if p is None:
                continue
            _refresh(e, p)
            refreshed.add(p.track_id)
            kept.append(e)
        else:
            s_entries.append(e)

    leftovers = [p for p in local_preds if p.track_id not in refreshed]
    dist = _distances([p.state for p in leftovers], [e.current_state for e in s_entries])
    promoted_s: set[int] = set()
    promoted_p: set[int] = set()
    for r, c in _greedy_pairs(dist, cfg.promote_gate_m):
        e, p = s_entries[c], leftovers[r]
        e.category = L
        e.agent_id = p.track_id
        _refresh(e, p)
        promoted_s.add(c)
        promoted_p.add(r)

    out: list[MapEntry] = kept
    for c, e in enumerate(s_entries):
        if c in promoted_s:
            out.append(e)
            continue
        e.unmatched_steps += 1
        if e.unmatched_steps <= cfg.stale_S_steps:
            out.append(e)
    for r, p in enumerate(leftovers):
        if r not in promoted_p:
            e = MapEntry(L, p.track_id, p.state, p.t_us, p.cls)
            _refresh(e, p)
            out.append(e)
    pmap.replace_all(out)
    return pmap


def _refresh(e: MapEntry, p: LocalPrediction) -> None:
    e.current_state = p.state
    e.t_us = p.t_us
    e.cls = p.cls
    e.local_pred = p.pred
    e.fused_pred = None
    e.unmatched_steps = 0


def is_relevant(state: State2D, ego_state: State2D, cfg: CollabConfig) -> float:
    """Linear proximity score, 1 at the ego and 0 beyond the relevance radius."""
    return max(0.0, 1.0 - state.distance_to(ego_state) / cfg.relevance_radius_m)


def update_from_association(
    pmap: PredictionMap,
    M: Sequence[tuple[str, Share]],
    U: Sequence[Share],
    cfg: CollabConfig,
    ego_state: State2D,
) -> PredictionMap:
    """Pool matched shares and open S entries for relevant unmatched ones."""
    for agent_id, share in M:
        e = pmap[agent_id]
        e.pool.append(share.pred)
        if e.category == S:
            e.current_state = share.state
            e.t_us = share.t_us
            e.unmatched_steps = 0
    for share in U:
        if is_relevant(share.state, ego_state, cfg) <= 0.0:
            continue
        base = f"S:{share.sender}:{share.index}"
        agent_id, k = base, 1
        while agent_id in pmap:
            agent_id = f"{base}#{k}"
            k += 1
        pmap.add(MapEntry(S, agent_id, share.state, share.t_us, share.cls, pool=[share.pred]))
    return pmap
