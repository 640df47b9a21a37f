import csv
import io
import json

from latefuse.cli import main


def test_synth_run_metrics(tmp_path, capsys):
    scn = tmp_path / "s.jsonl"
    assert main(["synth", "--preset", "occlusion_crossing", "--seed", "7", "--out", str(scn),
                 "--param", "duration=3.0"]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"defaults": {"broadcast_hz": 10}}))
    out = tmp_path / "out"
    args = ["run", "--scenario", str(scn), "--config", str(cfg), "--out", str(out), "--seed", "7",
            "--fusion", "on", "--delay", "on", "--drop", "on"]
    assert main(args) == 0
    first = (out / "run.jsonl").read_bytes()
    assert main(args) == 0
    assert (out / "run.jsonl").read_bytes() == first
    assert (out / "timings.jsonl").read_text().count("\n") > 0
    capsys.readouterr()
    assert main(["metrics", "--run", str(out / "run.jsonl"), "--scenario", str(scn), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["vehicle_id"] for r in rows] == ["v1", "v2"]
    assert json.loads((out / "report.json").read_text())["provenance"] == "fusion=on,delay=on,drop=on"
    # The run directory works in place of the log file.
    assert main(["metrics", "--run", str(out), "--scenario", str(scn)]) == 0
    assert list(csv.DictReader(io.StringIO(capsys.readouterr().out))) == rows


def test_fusion_off_is_deterministic(tmp_path):
    scn = tmp_path / "s.jsonl"
    main(["synth", "--preset", "convoy", "--seed", "1", "--out", str(scn), "--param", "duration=1.5"])
    digests = []
    for d in ("a", "b"):
        assert main(["run", "--scenario", str(scn), "--out", str(tmp_path / d), "--fusion", "off"]) == 0
        digests.append((tmp_path / d / "run.jsonl").read_bytes())
    assert digests[0] == digests[1]


def test_missing_scenario_exit_2(tmp_path, capsys):
    missing = tmp_path / "missing.jsonl"
    assert main(["run", "--scenario", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_preset_is_usage_error(tmp_path):
    import pytest

    with pytest.raises(SystemExit) as info:
        main(["synth", "--preset", "nope", "--out", str(tmp_path / "x.jsonl")])
    assert info.value.code == 2


def test_channel_stats_rows(capsys):
    assert main(["channel-stats", "--sizes", "200,800,1000", "--n", "20000", "--seed", "1"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [int(r["size_bytes"]) for r in rows] == [200, 800, 1000]
    assert float(rows[0]["p_drop"]) == 0.0
    assert abs(float(rows[2]["drop_rate"]) - 0.10) < 0.01
