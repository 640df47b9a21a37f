import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latefuse.comms import (
    AgentForecast,
    BudgetError,
    CodecError,
    OffsetRangeError,
    ParseError,
    VersionError,
    decode,
    encode,
)
from latefuse.comms.codec import (
    AGENT_BYTES,
    FRAME_HEADER_BYTES,
    MAX_FRAME_BYTES,
    WAYPOINT_BYTES,
    encode_payload,
    raw_payload_section_bytes,
)
from latefuse.core import AgentClass, PredictedTrajectory, State2D

GPS = 5_000_000


def random_agent(rng, n, anchor=(0.0, 0.0), var_max=60.0):
    cx, cy = anchor[0] + rng.uniform(-80, 80), anchor[1] + rng.uniform(-80, 80)
    times = tuple(GPS + 100_000 * (k + 1) for k in range(n))
    mean = np.column_stack([cx + rng.uniform(-50, 50, n), cy + rng.uniform(-50, 50, n)])
    var = rng.uniform(0, var_max, size=(n, 2))
    var[var == 0] = 1e-9
    cls = list(AgentClass)[int(rng.integers(len(AgentClass)))]
    return AgentForecast(cls, State2D(cx, cy), PredictedTrajectory(times, mean, var))


def test_layout_sizes():
    assert raw_payload_section_bytes([]) == 1 + 2 + 8 + 16 + 2 == 29
    assert AGENT_BYTES == 1 + 1 + 8
    assert WAYPOINT_BYTES == 2 + 2 + 2 + 2 + 2
    # 10 agents x 20 waypoints: flags + header + agent records + waypoint records.
    assert raw_payload_section_bytes([20] * 10) == 29 + 10 * 10 + 200 * 10


def test_header_only_message():
    frame = encode(3, GPS, [], compress=False)
    assert len(frame) == 3 + raw_payload_section_bytes([]) == 32
    msg = decode(frame)
    assert msg.agents == () and msg.sender_id == 3 and msg.gps_time == GPS


def test_raw_frame_length_matches_layout():
    rng = np.random.default_rng(0)
    agents = [random_agent(rng, n) for n in (0, 1, 7, 20)]
    frame = encode(1, GPS, agents, compress=False)
    assert len(frame) == FRAME_HEADER_BYTES - 1 + raw_payload_section_bytes([0, 1, 7, 20])


def test_large_message_exceeds_budget_unless_compressed():
    rng = np.random.default_rng(1)
    agents = [random_agent(rng, 20) for _ in range(10)]
    with pytest.raises(BudgetError) as info:
        encode(1, GPS, agents, compress=False)
    assert info.value.size == 3 + raw_payload_section_bytes([20] * 10)
    assert info.value.size > MAX_FRAME_BYTES


def test_smooth_forecasts_compress_under_budget():
    agents = []
    for i in range(10):
        times = tuple(GPS + 100_000 * (k + 1) for k in range(20))
        tau = np.arange(1, 21) * 0.1
        mean = np.column_stack([i * 5 + 8 * tau, np.zeros(20)])
        var = np.column_stack([0.04 + 0.25 * tau**2] * 2)
        agents.append(AgentForecast(AgentClass.CAR, State2D(i * 5, 0), PredictedTrajectory(times, mean, var)))
    frame = encode(1, GPS, agents)
    assert frame[1] & 1 and len(frame) <= MAX_FRAME_BYTES


def test_round_trip_randomized():
    rng = np.random.default_rng(2)
    for _ in range(300):
        anchor = (rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4))
        agents = [random_agent(rng, int(rng.integers(0, 6)), anchor) for _ in range(int(rng.integers(0, 5)))]
        msg = decode(encode(int(rng.integers(0, 65536)), GPS, agents, anchor=anchor))
        assert msg.gps_time == GPS and len(msg.agents) == len(agents)
        for a, b in zip(agents, msg.agents):
            assert a.cls is b.cls
            assert b.pred.t_us == a.pred.t_us
            assert abs(a.current.x - b.current.x) <= 0.005 + 1e-9
            if len(a.pred):
                assert np.max(np.abs(a.pred.mean - b.pred.mean)) <= 0.005 + 1e-9
                assert np.max(np.abs(a.pred.var - b.pred.var)) <= 5e-4 + 1e-12


def test_variance_saturates():
    times = (GPS + 100_000,)
    a = AgentForecast(AgentClass.CAR, State2D(0, 0), PredictedTrajectory(times, [[1, 1]], [[1e3, 0.5]]))
    b = decode(encode(1, GPS, [a])).agents[0]
    assert b.pred.var[0, 0] == pytest.approx(65.535) and b.pred.var[0, 1] == pytest.approx(0.5)


def test_budget_is_enforced():
    rng = np.random.default_rng(3)
    for n_agents in range(1, 16):
        agents = [random_agent(rng, 20) for _ in range(n_agents)]
        try:
            frame = encode(1, GPS, agents)
        except BudgetError as exc:
            assert exc.size > MAX_FRAME_BYTES
        else:
            assert len(frame) <= MAX_FRAME_BYTES
    with pytest.raises(BudgetError):
        encode(1, GPS, [random_agent(rng, 5)], budget=40)


def test_offset_range_error_names_agent():
    ok = AgentForecast(AgentClass.CAR, State2D(0, 0), PredictedTrajectory((GPS + 1000,), [[1, 1]], [[1, 1]]))
    far = AgentForecast(AgentClass.CAR, State2D(0, 0), PredictedTrajectory((GPS + 1000,), [[400, 0]], [[1, 1]]))
    with pytest.raises(OffsetRangeError) as info:
        encode(1, GPS, [ok, far])
    assert info.value.agent_index == 1
    early = AgentForecast(AgentClass.CAR, State2D(0, 0), PredictedTrajectory((GPS - 1000,), [[1, 1]], [[1, 1]]))
    with pytest.raises(OffsetRangeError):
        encode(1, GPS, [early])


@pytest.mark.parametrize("compress", [False, True])
def test_length_field_flips_raise_parse_error(compress):
    rng = np.random.default_rng(4)
    frame = encode(1, GPS, [random_agent(rng, 8) for _ in range(3)], compress=compress)
    for pos in (2, 3):
        for bit in range(8):
            bad = bytearray(frame)
            bad[pos] ^= 1 << bit
            with pytest.raises(ParseError) as info:
                decode(bytes(bad))
            assert info.value.offset >= 0


def test_version_and_truncation():
    frame = encode(1, GPS, [])
    with pytest.raises(VersionError):
        decode(bytes([2]) + frame[1:])
    for cut in range(len(frame)):
        with pytest.raises(ParseError):
            decode(frame[:cut])


def test_truncated_payload_reports_offset():
    rng = np.random.default_rng(5)
    payload = encode_payload(1, GPS, [random_agent(rng, 4)])
    short = payload[:-3]
    frame = struct.pack("<BBH", 1, 0, len(short)) + short
    with pytest.raises(ParseError) as info:
        decode(frame)
    assert FRAME_HEADER_BYTES <= info.value.offset <= len(frame)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_garbage_never_panics(data):
    try:
        decode(data)
    except CodecError:
        pass
