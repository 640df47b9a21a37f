import itertools

import numpy as np
import pytest

from latefuse.collab import (
    L,
    S,
    CollabConfig,
    LocalPrediction,
    MapEntry,
    PredictionMap,
    Share,
    is_relevant,
    spatial_match,
    temporal_align,
    update_from_association,
    update_from_predictor,
)
from latefuse.core import AgentClass, PredictedTrajectory, State2D

CFG = CollabConfig()
EGO = State2D(0, 0)


def pred_at(x, y, t0=0, n=3):
    times = tuple(t0 + 100_000 * (k + 1) for k in range(n))
    return PredictedTrajectory(times, np.tile([x, y], (n, 1)), np.ones((n, 2)))


def local(tid, x, y):
    return LocalPrediction(tid, AgentClass.CAR, State2D(x, y), 0, pred_at(x, y))


def share(x, y, sender=2, index=0):
    return Share(sender, index, AgentClass.CAR, State2D(x, y), 100_000, pred_at(x, y))


def test_temporal_align_examples():
    p = PredictedTrajectory((100_000, 200_000, 300_000), [[0, 0], [1, 0], [2, 0]], np.ones((3, 2)))
    state, kept = temporal_align(p, 150_000)
    assert kept.t_us == (200_000, 300_000)
    assert (state.x, state.y) == (1.0, 0.0)
    assert [t - 150_000 for t in kept.t_us] == [50_000, 150_000]
    state, kept = temporal_align(p, 0)
    assert kept.t_us == p.t_us and state.x == 0.0
    assert temporal_align(p, 300_001) is None


def test_spatial_match_gate():
    pmap = PredictionMap()
    pmap.add(MapEntry(L, "a", State2D(0, 0), 0))
    M, U = spatial_match(pmap, [share(0.5, 0)], 2.0)
    assert [m[0] for m in M] == ["a"] and U == []
    M, U = spatial_match(pmap, [share(10, 0)], 2.0)
    assert M == [] and len(U) == 1


def test_spatial_match_crossed_against_brute_force():
    # Two entries with shares that sit crossed (share 0 near entry 1 and vice
    # versa), perturbed randomly; greedy must agree with the min-sum matching.
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b = rng.uniform(-20, 20, size=2), rng.uniform(-20, 20, size=2)
        while np.hypot(*(a - b)) < 2.0:
            b = rng.uniform(-20, 20, size=2)
        sep = np.hypot(*(a - b))
        jit = rng.uniform(-0.2, 0.2, size=(2, 2)) * sep
        pts = np.array([a, b, b + jit[0], a + jit[1]])
        pmap = PredictionMap()
        pmap.add(MapEntry(L, "e0", State2D(*pts[0]), 0))
        pmap.add(MapEntry(L, "e1", State2D(*pts[1]), 0))
        shares = [share(*pts[2], index=0), share(*pts[3], index=1)]
        M, _ = spatial_match(pmap, shares, 1e3)
        d = np.hypot(*(pts[:2, None, :] - pts[None, 2:, :]).transpose(2, 0, 1))
        best = min(itertools.permutations(range(2)), key=lambda perm: d[0, perm[0]] + d[1, perm[1]])
        got = {e: s.index for e, s in M}
        assert got == {"e0": best[0], "e1": best[1]}


def test_greedy_is_nearest_first_not_min_sum():
    # Greedy takes the globally closest pair even when that raises the total.
    pmap = PredictionMap()
    pmap.add(MapEntry(L, "e0", State2D(0, 0), 0))
    pmap.add(MapEntry(L, "e1", State2D(2, 0), 0))
    shares = [share(1.0, 0, index=0), share(-1.05, 0, index=1)]
    M, U = spatial_match(pmap, shares, 5.0)
    assert {e: s.index for e, s in M} == {"e0": 0, "e1": 1}
    # The min-sum alternative (e0-1, e1-0) costs 2.05 against 1 + 3.05.


def test_each_entry_matched_once():
    pmap = PredictionMap()
    pmap.add(MapEntry(L, "a", State2D(0, 0), 0))
    M, U = spatial_match(pmap, [share(0.1, 0, index=0), share(0.2, 0, index=1)])
    assert len(M) == 1 and M[0][1].index == 0 and len(U) == 1


def test_update_from_predictor_initialization():
    pmap = update_from_predictor(PredictionMap(), [local("t1", 1, 1)], CFG)
    (e,) = list(pmap)
    assert e.category == L and e.agent_id == "t1" and e.pool == []


def test_promotion_preserves_pool():
    pmap = PredictionMap()
    pmap.add(MapEntry(S, "S:2:0", State2D(1, 0), 0, pool=[pred_at(1, 0), pred_at(1, 0)]))
    update_from_predictor(pmap, [local("t9", 1.2, 0)], CFG)
    (e,) = list(pmap)
    assert e.category == L and e.agent_id == "t9" and len(e.pool) == 2


def test_vanished_L_entry_is_removed():
    pmap = update_from_predictor(PredictionMap(), [local("t1", 1, 1), local("t2", 5, 5)], CFG)
    update_from_predictor(pmap, [local("t2", 5.1, 5)], CFG)
    assert pmap.ids() == ["t2"]


def test_stale_S_entries_expire():
    pmap = PredictionMap()
    pmap.add(MapEntry(S, "S:2:0", State2D(30, 0), 0))
    for _ in range(CFG.stale_S_steps):
        update_from_predictor(pmap, [], CFG)
        assert "S:2:0" in pmap
    update_from_predictor(pmap, [], CFG)
    assert "S:2:0" not in pmap


def test_refresh_clears_previous_fusion():
    pmap = update_from_predictor(PredictionMap(), [local("t1", 1, 1)], CFG)
    pmap["t1"].fused_pred = pred_at(9, 9)
    update_from_predictor(pmap, [local("t1", 1.1, 1)], CFG)
    assert pmap["t1"].fused_pred is None


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        update_from_predictor(PredictionMap(), [local("t1", 0, 0), local("t1", 3, 3)], CFG)


def test_update_from_association():
    pmap = PredictionMap()
    pmap.add(MapEntry(L, "a", State2D(0, 0), 0))
    z = share(0.3, 0)
    update_from_association(pmap, [("a", z)], [], CFG, EGO)
    assert len(pmap["a"].pool) == 1
    cfg50 = CollabConfig(relevance_radius_m=50.0)
    update_from_association(pmap, [], [share(5, 0, index=3)], cfg50, EGO)
    assert "S:2:3" in pmap and pmap["S:2:3"].category == S and len(pmap["S:2:3"].pool) == 1
    before = pmap.ids()
    update_from_association(pmap, [], [share(500, 0, index=4)], cfg50, EGO)
    assert pmap.ids() == before


def test_S_id_collision_gets_suffix():
    pmap = PredictionMap()
    update_from_association(pmap, [], [share(5, 0)], CFG, EGO)
    update_from_association(pmap, [], [share(20, 0)], CFG, EGO)
    assert pmap.ids(S) == ["S:2:0", "S:2:0#1"]


def test_matched_S_entry_follows_share():
    pmap = PredictionMap()
    pmap.add(MapEntry(S, "S:2:0", State2D(5, 0), 0, unmatched_steps=2))
    update_from_association(pmap, [("S:2:0", share(5.5, 0))], [], CFG, EGO)
    e = pmap["S:2:0"]
    assert e.current_state.x == 5.5 and e.t_us == 100_000 and e.unmatched_steps == 0


def test_relevance_is_linear():
    cfg = CollabConfig(relevance_radius_m=50.0)
    assert is_relevant(EGO, EGO, cfg) == 1.0
    assert is_relevant(State2D(50, 0), EGO, cfg) == 0.0
    assert is_relevant(State2D(0, 25), EGO, cfg) == pytest.approx(0.5)
