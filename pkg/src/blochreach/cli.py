"""Command-line driver: estimate, report, export-points, validate.

A run lives in ``<out>/<run id>/``:

* ``config.json``   the configuration snapshot
* ``evidence.log``  one JSON record per outer box and per classified node,
  appended as results arrive; an interrupted run resumes from it
* ``summary.json``  per-stage metrics, written once the run completes
* ``points-<stage>.csv``  member nodes plus the anchor
* ``timing.json``   wall-clock figures, kept apart so the other files are
  byte-for-byte reproducible
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, from_dict, load
from .controls import ControlBox, scaled_box
from .estimation import (
    NodeResult,
    OuterBox,
    build_grid,
    metrics,
    replay_value,
    sweep,
)
from .optimize import mix_seed
from .validation import run_all

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

REPORT_COLUMNS = [
    "stage", "T", "d_mult", "delta_dv", "delta_dn", "beta_xT", "beta_dv", "beta_dn",
    "card", "percent_grid", "volume", "percent_ball", "farthest_distance",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class RunStore:
    """Evidence log backed store; one JSON object per line, append-only."""

    def __init__(self, run_dir: Path, run_id: str):
        self.path = run_dir / "evidence.log"
        self.run_id = run_id
        self.boxes = {}
        self.nodes = {}
        if self.path.exists():
            self._load()

    def _load(self):
        good = 0
        with open(self.path, "rb") as fh:
            data = fh.read()
        for line in data.splitlines(keepends=True):
            if not line.endswith(b"\n"):
                break  # torn final write
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break
            self._absorb(rec)
            good += len(line)
        if good != len(data):
            with open(self.path, "r+b") as fh:
                fh.truncate(good)

    def _absorb(self, rec):
        stage = rec["stage"]
        if rec["record"] == "box":
            self.boxes[stage] = None if rec["lo"] is None else OuterBox(rec["lo"], rec["hi"])
        else:
            fields = {k: rec[k] for k in NodeResult.__dataclass_fields__}
            fields["point"] = tuple(fields["point"])
            self.nodes[(stage, rec["index"])] = NodeResult(**fields)

    def _append(self, rec):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def get_box(self, stage):
        return self.boxes.get(stage, KeyError)

    def put_box(self, stage, box):
        self.boxes[stage] = box
        self._append({
            "run": self.run_id, "record": "box", "stage": stage,
            "lo": None if box is None else list(box.lo),
            "hi": None if box is None else list(box.hi),
        })

    def get_node(self, stage, index):
        return self.nodes.get((stage, index))

    def put_node(self, stage, result):
        self.nodes[(stage, result.index)] = result
        rec = {"run": self.run_id, "record": "node", "stage": stage}
        rec.update(asdict(result))
        self._append(rec)

    def stage_nodes(self, stage):
        return sorted((r for (s, _), r in self.nodes.items() if s == stage), key=lambda r: r.index)


class _StageView:
    """Maps a sweep's local stage numbers onto the run's global numbering."""

    def __init__(self, store: RunStore, offset: int):
        self.store, self.offset = store, offset

    def get_box(self, q):
        return self.store.get_box(self.offset + q)

    def put_box(self, q, box):
        self.store.put_box(self.offset + q, box)

    def get_node(self, q, i):
        return self.store.get_node(self.offset + q, i)

    def put_node(self, q, result):
        self.store.put_node(self.offset + q, result)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _stages(cfg: RunConfig):
    """``(stage number, T, multiplier)`` in execution order."""
    q = len(cfg.d_multipliers)
    return [(ti * q + k, T, d) for ti, T in enumerate(cfg.T) for k, d in enumerate(cfg.d_multipliers)]


def _points_csv(cfg: RunConfig, members) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "x3", "best_value", "is_anchor"])
    w.writerow([repr(float(c)) for c in cfg.anchor] + ["", 1])
    for r in members:
        w.writerow([repr(c) for c in r.point] + [repr(r.best_value), 0])
    return buf.getvalue()


def _run_dir(out, run_id) -> Path:
    path = Path(out) / run_id
    if not (path / "config.json").exists():
        raise UsageError(f"unknown run id {run_id!r} under {out}")
    return path


def _load_run(out, run_id):
    path = _run_dir(out, run_id)
    cfg = from_dict(json.loads((path / "config.json").read_text()))
    return path, cfg


def _previous_members(out, ref) -> list:
    path, cfg = _load_run(out, ref["run"])
    store = RunStore(path, ref["run"])
    stage = int(ref["stage"])
    if stage not in {s for s, _, _ in _stages(cfg)}:
        raise UsageError(f"run {ref['run']} has no stage {stage}")
    return [r.index for r in store.stage_nodes(stage) if r.member]


def cmd_estimate(cfg: RunConfig, out: str, force: bool = False, log=print) -> str:
    run_id = cfg.content_hash(__version__)
    run_dir = Path(out) / run_id
    if force and run_dir.exists():
        shutil.rmtree(run_dir)
    if (run_dir / "summary.json").exists():
        log(run_id)
        return run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    _write_atomic(run_dir / "config.json", snapshot)

    first = None
    if cfg.candidates_from is not None:
        first = _previous_members(out, cfg.candidates_from)

    store = RunStore(run_dir, run_id)
    started = time.time()
    base_box = cfg.control_box()
    params, grid, reg = cfg.params(), cfg.grid(), cfg.regularizer_spec()
    opt, policy = cfg.optimizer_config(), cfg.retry_policy()
    bxt, bdv, bdn = cfg.weights() if reg.active else (None, None, None)
    n_grid = len(build_grid(cfg.M))
    rows = []
    q = len(cfg.d_multipliers)
    for ti, T in enumerate(cfg.T):
        ests = sweep(
            cfg.kind, cfg.anchor, T, base_box, cfg.d_multipliers, grid, params, reg,
            replace(opt, seed=mix_seed(cfg.seed, ti)), policy, cfg.workers,
            _StageView(store, ti * q), first, cfg.use_outer_box,
            (cfg.cs_beta_x0, cfg.cs_beta_xT),
        )
        for k, est in enumerate(ests):
            stage = ti * q + k
            m = metrics(est)
            rows.append({
                "stage": stage,
                "T": T,
                "d_mult": cfg.d_multipliers[k],
                "outer_box": None if est.box is None else {"lo": list(est.box.lo), "hi": list(est.box.hi)},
                "candidate_count": m["candidate_count"],
                "member_count": m["member_count"],
                "percent_grid": 100.0 * m["member_count"] / n_grid,
                "volume": m["volume"],
                "percent_ball": 100.0 * m["volume_fraction"],
                "farthest_distance": m["farthest_distance"],
                "regularizer": cfg.regularizer,
                "delta_dv": cfg.delta_dv if reg.active else None,
                "delta_dn": cfg.delta_dn if reg.active else None,
                "beta_xT": bxt,
                "beta_dv": bdv,
                "beta_dn": bdn,
            })
            _write_atomic(run_dir / f"points-{stage}.csv", _points_csv(cfg, est.members))
    summary = {
        "run_id": run_id,
        "code_version": __version__,
        "kind": cfg.kind,
        "anchor": cfg.anchor,
        "grid_nodes": n_grid,
        "warm_start": False,
        "stages": rows,
    }
    _write_atomic(run_dir / "timing.json", json.dumps({"seconds": time.time() - started}) + "\n")
    _write_atomic(run_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    log(run_id)
    return run_id


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_report(out: str, run_id: str, fmt: str = "text") -> str:
    path = _run_dir(out, run_id)
    summary_path = path / "summary.json"
    if not summary_path.exists():
        raise UsageError(f"run {run_id} has not completed")
    summary = json.loads(summary_path.read_text())
    rows = []
    for s in summary["stages"]:
        rows.append([
            s["stage"], s["T"], s["d_mult"], s["delta_dv"], s["delta_dn"], s["beta_xT"],
            s["beta_dv"], s["beta_dn"], s["member_count"], s["percent_grid"], s["volume"],
            s["percent_ball"], s["farthest_distance"] if s["member_count"] else 0.0,
        ])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])
        return buf.getvalue()
    cells = [REPORT_COLUMNS] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def cmd_export_points(out: str, run_id: str, stage: int) -> Path:
    path, cfg = _load_run(out, run_id)
    if stage not in {s for s, _, _ in _stages(cfg)}:
        raise UsageError(f"run {run_id} has no stage {stage}")
    store = RunStore(path, run_id)
    members = [r for r in store.stage_nodes(stage) if r.member]
    target = path / f"points-{stage}.csv"
    _write_atomic(target, _points_csv(cfg, members))
    return target


def replay_run(out: str, run_id: str, tol: float = 1e-12):
    """Re-evaluate every stored member control; returns the failing records."""
    path, cfg = _load_run(out, run_id)
    store = RunStore(path, run_id)
    base = cfg.control_box()
    bad = []
    checked = 0
    for stage, T, d in _stages(cfg):
        box = scaled_box(base, d)
        for r in store.stage_nodes(stage):
            if not r.member:
                continue
            value = replay_value(cfg.kind, cfg.anchor, T, box, cfg.grid(), cfg.params(),
                                 cfg.regularizer_spec(), r)
            checked += 1
            if abs(value - r.best_value) > tol:
                bad.append((stage, r.index, r.best_value, value))
    return checked, bad


def cmd_validate(out=None, run_id=None, log=print) -> bool:
    ok = True
    for name, passed, detail in run_all():
        log(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok = ok and passed
    if run_id is not None:
        checked, bad = replay_run(out, run_id)
        log(f"{'PASS' if not bad else 'FAIL'}  evidence replay: {checked - len(bad)}/{checked} members reproduced")
        ok = ok and not bad
    return ok


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="blochreach", description="Reachable and controllability set estimation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", help="run the estimation described by a config file")
    e.add_argument("--config", required=True, help="JSON run configuration")
    e.add_argument("--workers", type=int, help="worker processes (overrides config)")
    e.add_argument("--seed", type=int, help="base seed (overrides config)")
    e.add_argument("--out", help="output directory (overrides config)")
    e.add_argument("--force", action="store_true", help="discard any stored results and recompute")

    r = sub.add_parser("report", help="per-stage metrics table of a completed run")
    r.add_argument("--run", required=True)
    r.add_argument("--out", default="runs")
    r.add_argument("--format", choices=("text", "csv"), default="text")

    x = sub.add_parser("export-points", help="write the member point cloud of one stage")
    x.add_argument("--run", required=True)
    x.add_argument("--stage", type=int, required=True)
    x.add_argument("--out", default="runs")

    v = sub.add_parser("validate", help="run the built-in oracle checks")
    v.add_argument("--run", help="also replay the stored evidence of this run")
    v.add_argument("--out", default="runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            cfg = load(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.workers is not None:
                cfg.workers = args.workers
            cfg.validate()
            try:
                cmd_estimate(cfg, args.out or cfg.output_dir, args.force)
            except (ConfigError, UsageError):
                raise
            except Exception as exc:
                print(f"estimate failed: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
        elif args.command == "report":
            sys.stdout.write(cmd_report(args.out, args.run, args.format))
        elif args.command == "export-points":
            print(cmd_export_points(args.out, args.run, args.stage))
        elif args.command == "validate":
            if not cmd_validate(args.out, args.run):
                return EXIT_VALIDATION
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
