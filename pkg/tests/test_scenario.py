import json
from pathlib import Path

import pytest

from latefuse.core import AgentClass, BoundingBox, PredictedTrajectory, State2D
from latefuse.sim.scenario import (
    Frame,
    Scenario,
    ScenarioMeta,
    ValidationError,
    VehicleFrame,
    load_scenario,
    parse_scenario,
    save_scenario,
)

FIXTURE = Path(__file__).parent / "fixtures" / "occlusion_crossing-7.jsonl"


def minimal(n=2):
    box = BoundingBox(State2D(5, 1, heading=0.1), 4.5, 1.9, 1.6, 0.1, "a", AgentClass.CAR)
    fc = {"a": PredictedTrajectory((200_000,), [[6, 1]], [[0.1, 0.1]])}
    frames = tuple(
        Frame(k, k * 100_000, {"v1": VehicleFrame(State2D(0, 0, heading=0.0), (box,), fc if k else {})}, (box,))
        for k in range(n)
    )
    return Scenario(ScenarioMeta("tiny", 0.1, 0.1 * n, 0, ("v1",)), frames)


def lines_of(scn, tmp_path):
    p = tmp_path / "s.jsonl"
    save_scenario(scn, p)
    return p, p.read_text().splitlines()


def test_round_trip(tmp_path):
    scn = minimal()
    p, _ = lines_of(scn, tmp_path)
    back = load_scenario(p)
    assert back == scn
    f1 = back.frames[1].vehicles["v1"]
    assert f1.forecasts["a"].t_us == (200_000,)
    save_scenario(back, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == p.read_bytes()


def test_decreasing_timestamp_names_frame(tmp_path):
    _, lines = lines_of(minimal(3), tmp_path)
    frame = json.loads(lines[3])
    frame["t_us"] = 50_000
    lines[3] = json.dumps(frame)
    with pytest.raises(ValidationError) as info:
        parse_scenario(lines)
    assert "frame 2" in str(info.value) and info.value.line == 4 and info.value.field == "t_us"


def test_non_uniform_dt(tmp_path):
    _, lines = lines_of(minimal(), tmp_path)
    frame = json.loads(lines[2])
    frame["t_us"] = 150_000
    lines[2] = json.dumps(frame)
    with pytest.raises(ValidationError, match="uniform dt"):
        parse_scenario(lines)


def test_missing_field_reports_path(tmp_path):
    _, lines = lines_of(minimal(), tmp_path)
    frame = json.loads(lines[1])
    del frame["ground_truth"][0]["width"]
    lines[1] = json.dumps(frame)
    with pytest.raises(ValidationError) as info:
        parse_scenario(lines)
    assert info.value.line == 2 and "width" in str(info.value)


def test_duplicate_agent_ids(tmp_path):
    _, lines = lines_of(minimal(), tmp_path)
    frame = json.loads(lines[1])
    frame["ground_truth"].append(frame["ground_truth"][0])
    lines[1] = json.dumps(frame)
    with pytest.raises(ValidationError, match="duplicate"):
        parse_scenario(lines)


def test_undeclared_vehicle_and_bad_json(tmp_path):
    _, lines = lines_of(minimal(), tmp_path)
    frame = json.loads(lines[1])
    frame["vehicles"]["v9"] = frame["vehicles"]["v1"]
    with pytest.raises(ValidationError, match="not declared"):
        parse_scenario([lines[0], json.dumps(frame)])
    with pytest.raises(ValidationError, match="line 2"):
        parse_scenario([lines[0], "{not json"])
    with pytest.raises(ValidationError):
        parse_scenario([])


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="nope.jsonl"):
        load_scenario(tmp_path / "nope.jsonl")


def test_fixture_loads():
    scn = load_scenario(FIXTURE)
    assert scn.meta.vehicles == ("v1", "v2")
    agents = {b.agent_id for f in scn.frames for b in f.ground_truth} - set(scn.meta.vehicles)
    assert len(agents) >= 3
