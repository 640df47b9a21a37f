"""Command-line front end: run, synth, metrics, channel-stats."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .comms import ChannelParams, channel_sample, delay_quantile, p_drop
from .metrics import ReportError, evaluate_run, rows_to_csv, summary_to_json
from .sim.config import default_run_config, load_run_config
from .sim.runner import GlobalSettings, RunLog, run
from .sim.scenario import ValidationError, load_scenario, save_scenario
from .sim.synth import PRESETS, UsageError, generate_synthetic

log = logging.getLogger("latefuse")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _onoff(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {text!r}")
    return text == "on"


def _sizes(text: str) -> list[int]:
    try:
        out = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not out or any(s < 1 for s in out):
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return out


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latefuse", description="Collaborative trajectory prediction by late fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write a run log")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--config", type=Path, help="JSON run configuration (defaults if omitted)")
    r.add_argument("--out", required=True, type=Path, help="output directory")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--fusion", type=_onoff, default=True, metavar="on|off")
    r.add_argument("--delay", type=_onoff, default=True, metavar="on|off")
    r.add_argument("--drop", type=_onoff, default=True, metavar="on|off")

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--preset", required=True, choices=PRESETS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE")

    m = sub.add_parser("metrics", help="score a run log against its scenario")
    m.add_argument("--run", required=True, type=Path, help="run.jsonl or the directory holding it")
    m.add_argument("--scenario", required=True, type=Path)
    m.add_argument("--out", type=Path, help="directory for report.csv and report.json")
    m.add_argument("--iou", type=float, default=0.5)
    m.add_argument("--tsr", type=float, default=0.5)
    m.add_argument("--eval-radius", type=float, default=50.0)

    c = sub.add_parser("channel-stats", help="Monte-Carlo delay and drop statistics per packet size")
    c.add_argument("--sizes", type=_sizes, default=[200, 800, 1000])
    c.add_argument("--n", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, help="write CSV here instead of standard output")
    return p


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    vids = list(scn.meta.vehicles)
    cfg = load_run_config(args.config, vids) if args.config else default_run_config(vids)
    settings = GlobalSettings(args.fusion, args.delay, args.drop, args.seed)
    timings: list[dict] = []
    runlog = run(scn, cfg, settings, timings)
    args.out.mkdir(parents=True, exist_ok=True)
    runlog.save(args.out / "run.jsonl")
    (args.out / "timings.jsonl").write_text("".join(json.dumps(t) + "\n" for t in timings))
    n_err = sum(1 for r in runlog.records if r.get("errors"))
    print(f"run {scn.meta.id} [{settings.provenance}, seed={args.seed}]: "
          f"{len(runlog.records)} vehicle-frames, {n_err} with errors, sha256={runlog.digest()[:16]}")
    return EXIT_OK


def cmd_synth(args) -> int:
    scn = generate_synthetic(args.preset, dict(args.param), args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scn, args.out)
    load_scenario(args.out)  # what we wrote must validate
    print(f"synth {scn.meta.id}: {len(scn.frames)} frames, vehicles {', '.join(scn.meta.vehicles)} -> {args.out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    scn = load_scenario(args.scenario)
    path = args.run / "run.jsonl" if args.run.is_dir() else args.run
    runlog = RunLog.load(path)
    rows, summary = evaluate_run(runlog, scn, iou_threshold=args.iou, tsr_threshold=args.tsr,
                                 eval_radius_m=args.eval_radius)
    text = rows_to_csv(rows)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.csv").write_text(text)
        (args.out / "report.json").write_text(summary_to_json(summary))
    sys.stdout.write(text)
    return EXIT_OK


def channel_stats(sizes: Sequence[int], n: int, seed: int, params: Optional[ChannelParams] = None) -> list[dict]:
    """Empirical vs analytic drop rate and delay quantiles per packet size."""
    params = params or ChannelParams()
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        outs = [channel_sample(size, params, rng) for _ in range(n)]
        delays = np.array([o.delay_ms for o in outs if not o.dropped])
        p50, p95 = np.percentile(delays, [50, 95]) if delays.size else (np.nan, np.nan)
        rows.append({
            "size_bytes": size,
            "p_drop": p_drop(size, params),
            "drop_rate": 1.0 - delays.size / n,
            "delay_p50_analytic_ms": delay_quantile(0.5, size, params),
            "delay_p50_empirical_ms": float(p50),
            "delay_p95_analytic_ms": delay_quantile(0.95, size, params),
            "delay_p95_empirical_ms": float(p95),
        })
    return rows


def cmd_channel_stats(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    rows = channel_stats(args.sizes, args.n, args.seed)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    if args.out:
        args.out.write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "synth": cmd_synth, "metrics": cmd_metrics, "channel-stats": cmd_channel_stats}


def _setup_logging() -> None:
    level = os.environ.get("LATEFUSE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, UsageError, ReportError) as exc:
        print(f"latefuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("unhandled error", exc_info=True)
        print(f"latefuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
