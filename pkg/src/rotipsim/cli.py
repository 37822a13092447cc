"""Command-line entry point.

Every subcommand is a pure function of (config file, seeds): rows from worker
processes are sorted by (seed, index) before writing, so the output bytes do
not depend on ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import experiments as ex
from .config import ScenarioConfig, load_config
from .errors import ConfigError, Infeasible, InvalidScenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_CHECK = 4

GOLDEN_DIR = Path(__file__).parent / "goldens"


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def to_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str], cfg: ScenarioConfig,
           seeds: Sequence[int]) -> str:
    buf = io.StringIO()
    buf.write(f"#config-hash={cfg.hash} #seed={','.join(str(s) for s in seeds)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _run(fn: Callable[[ScenarioConfig, int], list[dict[str, Any]]], cfg: ScenarioConfig,
         seeds: Sequence[int], workers: int) -> list[dict[str, Any]]:
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(partial(fn, cfg), seeds))
    else:
        chunks = [fn(cfg, s) for s in seeds]
    rows = [r for c in chunks for r in c]
    return sorted(rows, key=lambda r: (r["seed"], r["index"]))


def _mean(rows: list[dict[str, Any]], key: str) -> float:
    return float(np.mean([r[key] for r in rows])) if rows else float("nan")


# ----------------------------------------------------------------------------- commands
# Each returns (files: {name: text}, summary lines, check verdicts {criterion: passed}).

Result = tuple[dict[str, str], list[str], dict[str, bool]]


def cmd_estimate_plane(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(ex.estimate_plane_rows, cfg, seeds, workers)
    cols = ["seed", "index", "angle_deg", "method", "error_deg"]
    by = {m: [r["error_deg"] for r in rows if r["method"] == m] for m in ("tactile", "vision", "force")}
    lines = [f"{m}: mean {np.mean(v):.4f} deg, max {np.max(v):.4f} deg" for m, v in by.items()]
    per_seed = []
    for s in seeds:
        m = {k: np.mean([r["error_deg"] for r in rows if r["seed"] == s and r["method"] == k]) for k in by}
        per_seed.append(m["tactile"] < m["vision"] < m["force"])
    checks = {"ordering tactile < vision < force per seed": all(per_seed)}
    return {"estimate_plane.csv": to_csv(rows, cols, cfg, seeds)}, lines, checks


def cmd_contact_trials(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(ex.contact_trial_rows, cfg, seeds, workers)
    cols = ["seed", "index", "method", "one_finger", "two_finger", "adjust_rounds", "ticks", "failure"]
    summary = []
    rates = {}
    for m in dict.fromkeys(r["method"] for r in rows):
        sub = [r for r in rows if r["method"] == m]
        rates[m] = _mean(sub, "two_finger")
        summary.append({"method": m, "trials": len(sub), "one_finger_rate": _mean(sub, "one_finger"),
                        "two_finger_rate": rates[m]})
    buf = io.StringIO()
    buf.write(f"#config-hash={cfg.hash} #seed={','.join(str(s) for s in seeds)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "trials", "one_finger_rate", "two_finger_rate"])
    for s in summary:
        w.writerow([_fmt(s[k]) for k in ("method", "trials", "one_finger_rate", "two_finger_rate")])
    lines = [f"{s['method']}: one-finger {s['one_finger_rate']:.3f}, two-finger {s['two_finger_rate']:.3f}"
             for s in summary]
    checks = {}
    if "VisionForceTactile" in rates and "Vision" in rates:
        checks["tactile two-finger rate above vision-only"] = rates["VisionForceTactile"] > rates["Vision"]
    return {"contact_trials.csv": to_csv(rows, cols, cfg, seeds), "contact_summary.csv": buf.getvalue()}, lines, checks


def cmd_feed(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(partial(ex.feed_rows, with_logs=True), cfg, seeds, workers)
    cols = ["scenario", "seed", "policy", "sheets_fed", "sr", "ppm", "mean_feed_s", "std_feed_s"]
    files = {"feed_summary.csv": to_csv(rows, cols, cfg, seeds)}
    for r in rows:
        files[f"feed_logs/{r['policy']}_{r['seed']}.jsonl"] = r["_log"]
    lines = []
    for pol in ("WithCA", "WithoutCA"):
        sub = [r for r in rows if r["policy"] == pol]
        lines.append(f"{pol}: sheets fed {_mean(sub, 'sheets_fed'):.2f}, mean sheet time {_mean(sub, 'mean_feed_s'):.3f} s")
    ca = {r["seed"]: r["sheets_fed"] for r in rows if r["policy"] == "WithCA"}
    wo = {r["seed"]: r["sheets_fed"] for r in rows if r["policy"] == "WithoutCA"}
    checks = {"WithCA feeds at least as many sheets as WithoutCA": all(ca[s] >= wo[s] for s in ca)}
    return files, lines, checks


def cmd_grasp_bench(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(ex.grasp_rows, cfg, seeds, workers)
    cols = ["seed", "index", "angle_deg", "material", "mode", "grasped", "target", "sr", "ppm", "elapsed_s"]
    on = [r for r in rows if r["mode"] == "counting_on"]
    off = [r for r in rows if r["mode"] == "counting_off"]
    lines = [f"counting on: SR {_mean(on, 'sr'):.3f}, PPM {_mean(on, 'ppm'):.2f}",
             f"counting off: SR {_mean(off, 'sr'):.3f}, PPM {_mean(off, 'ppm'):.2f}"]
    checks = {"counting raises SR": _mean(on, "sr") > _mean(off, "sr"),
              "counting lowers PPM": _mean(on, "ppm") < _mean(off, "ppm")}
    return {"grasp_bench.csv": to_csv(rows, cols, cfg, seeds)}, lines, checks


def cmd_count_bench(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(ex.count_rows, cfg, seeds, workers)
    cols = ["seed", "index", "material", "count", "true", "exact"]
    lines = []
    for m in cfg.materials:
        sub = [r for r in rows if r["material"] == m]
        lines.append(f"{m}: counting accuracy {_mean(sub, 'exact'):.3f} over {len(sub)} runs")
    return {"count_bench.csv": to_csv(rows, cols, cfg, seeds)}, lines, {}


def cmd_force_analysis(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rep = ex.force_report(cfg)
    text = f"#config-hash={cfg.hash} #seed=none\n" + rep.to_csv()
    lines = [f"ordering verdict: {rep.verdict}"]
    if rep.verdict == "infeasible":
        raise Infeasible("at least one squeeze location is infeasible (mu_s1 <= mu_k2)")
    checks = {"center > edge > corner1 > corner2": rep.verdict == "strict",
              "center / corner2 >= 2": rep.ratio("center", "corner_case2") >= 2.0}
    return {"force_analysis.csv": text}, lines, checks


def cmd_calibrate(cfg: ScenarioConfig, seeds: Sequence[int], workers: int) -> Result:
    rows = _run(ex.calibration_rows, cfg, seeds, workers)
    cols = ["seed", "index", "true_o_x", "true_o_y", "true_o_z", "o_x", "o_y", "o_z", "err_max_mm",
            "plane_residual_deg", "evaluations", "rounds"]
    report = "".join(r["_report"] + "\n" for r in rows)
    worst = max(r["err_max_mm"] for r in rows)
    limit = 0.3 if cfg.calibration["noisy"] else 0.05
    lines = [f"worst offset error {worst:.4f} mm over {len(rows)} draws"]
    return ({"calibration.csv": to_csv(rows, cols, cfg, seeds), "calibration_report.jsonl": report}, lines,
            {f"offsets within {limit} mm": worst < limit})


COMMANDS: dict[str, Callable[[ScenarioConfig, Sequence[int], int], Result]] = {
    "estimate-plane": cmd_estimate_plane,
    "contact-trials": cmd_contact_trials,
    "feed": cmd_feed,
    "grasp-bench": cmd_grasp_bench,
    "force-analysis": cmd_force_analysis,
    "calibrate": cmd_calibrate,
    "count-bench": cmd_count_bench,
}


def digest(files: dict[str, str]) -> dict[str, str]:
    return {name: hashlib.sha256(text.encode("utf-8")).hexdigest() for name, text in sorted(files.items())}


def golden_path(command: str) -> Path:
    return GOLDEN_DIR / f"{command}.json"


def check_against_golden(command: str, files: dict[str, str], cfg: ScenarioConfig,
                         seeds: Sequence[int]) -> tuple[bool, str]:
    path = golden_path(command)
    if not path.exists():
        return False, f"no golden recorded for {command}"
    gold = json.loads(path.read_text(encoding="utf-8"))
    if gold["config_hash"] != cfg.hash or gold["seeds"] != list(seeds):
        return False, "golden was recorded for a different config or seed list"
    if gold["files"] != digest(files):
        changed = sorted(k for k in set(gold["files"]) | set(digest(files))
                         if gold["files"].get(k) != digest(files).get(k))
        return False, "output differs from golden: " + ", ".join(changed[:5])
    return True, "matches golden"


def record_golden(command: str, files: dict[str, str], cfg: ScenarioConfig, seeds: Sequence[int]) -> Path:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    path = golden_path(command)
    payload = {"config_hash": cfg.hash, "seeds": list(seeds), "files": digest(files)}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _seeds(args: argparse.Namespace, cfg: ScenarioConfig) -> list[int]:
    if args.seed_list:
        try:
            return [int(s) for s in args.seed_list.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"bad --seed-list: {args.seed_list!r}") from e
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        return list(range(args.seeds))
    return list(cfg.seeds)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotipsim", description="Tactile grasping simulator experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, default=None, help="scenario INI file (defaults if omitted)")
        g = s.add_mutually_exclusive_group()
        g.add_argument("--seeds", type=int, default=None, help="use seeds 0..N-1")
        g.add_argument("--seed-list", default=None, help="comma-separated seeds")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--check", action="store_true", help="compare with the committed golden and run checks")
        s.add_argument("--record-golden", action="store_true", help=argparse.SUPPRESS)
        s.add_argument("--workers", type=int, default=1)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seeds = _seeds(args, cfg)
        if args.command == "contact-trials" and args.seeds is None and not args.seed_list:
            seeds = list(range(cfg.trials))
        files, lines, checks = COMMANDS[args.command](cfg, seeds, max(1, args.workers))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, InvalidScenario) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE

    if args.out is not None:
        for name, text in files.items():
            path = args.out / name
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
    for line in lines:
        print(line)
    if args.record_golden:
        print(f"recorded {record_golden(args.command, files, cfg, seeds)}")
    if args.check:
        ok, msg = check_against_golden(args.command, files, cfg, seeds)
        print(f"[{'PASS' if ok else 'FAIL'}] golden: {msg}")
        for name, passed in checks.items():
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")
            ok = ok and passed
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
