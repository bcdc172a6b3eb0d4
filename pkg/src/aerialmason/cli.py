"""Command-line front end: plan, run, validate and replay missions."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .blueprint import BRICK, Blueprint, BlueprintError, to_dot, validate_blueprint
from .scenarios import case_study_path
from .sim import SimConfig, SimulationError, metrics_summary, replay, run_mission

OUT_ENV = "AERIALMASON_OUT"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _blueprint_arg(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--blueprint", type=Path, required=required,
                   help="blueprint JSON (default: bundled case study)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aerialmason",
                                     description="Plan and simulate multi-UAV masonry missions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the task table and export both graphs as DOT")
    _blueprint_arg(p)
    p.add_argument("--dot", type=Path, help="write Graphviz DOT here")

    p = sub.add_parser("run", help="simulate a mission and write its artifacts")
    _blueprint_arg(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path,
                   help=f"output directory (default: ${OUT_ENV} or ./runs)")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override a mission or engine parameter; repeatable")
    p.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed..seed+N-1")
    p.add_argument("--workers", type=int, default=1, help="processes used with --runs")

    p = sub.add_parser("validate", help="schema, invariant and layout checks only")
    _blueprint_arg(p, required=True)

    p = sub.add_parser("replay", help="recompute metrics from an events.jsonl")
    p.add_argument("--events", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write metrics.json here")
    return parser


def _load(path: Path | None) -> Blueprint:
    if path is None:
        with case_study_path() as p:
            return Blueprint.load(p)
    return Blueprint.load(path)


def _err(msg: str) -> None:
    print(f"aerialmason: {msg}", file=sys.stderr)


def cmd_plan(args) -> int:
    try:
        bp = _load(args.blueprint)
    except BlueprintError as exc:
        _err(f"{exc.field or 'blueprint'}: {exc}")
        return EXIT_USAGE
    status = {t.id: "placed" if t.initially_complete else "pending" for t in bp.tasks}
    print(f"{'task':<6} {'kind':<9} {'status':<8} {'needs':<14} conflicts")
    for t in bp.tasks:
        needs = ",".join(c for p_, c in bp.dep.edges if p_ == t.id) or "-"
        conf = ",".join(sorted(bp.conflict.neighbours(t.id))) or "-"
        print(f"{t.id:<6} {t.kind:<9} {status[t.id]:<8} {needs:<14} {conf}")
    pending = [t for t in bp.tasks if not t.initially_complete]
    n_b = sum(t.kind == BRICK for t in pending)
    print(f"pending: {n_b} brick, {len(pending) - n_b} adhesion; "
          f"conflict pairs: {len(bp.conflict.pairs)}")
    if args.dot:
        args.dot.write_text(to_dot(bp.dep, bp.conflict))
    return EXIT_OK


def _config(args) -> SimConfig:
    cfg = SimConfig()
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            cfg = cfg.with_param(key.strip(), value.strip())
        except KeyError:
            raise ValueError(f"unknown parameter {key!r}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _one_run(bp: Blueprint, cfg: SimConfig, out: Path) -> tuple[bool, str]:
    result = run_mission(bp, cfg, out)
    return result.metrics.success, metrics_summary(result.metrics)


def cmd_run(args) -> int:
    try:
        cfg = _config(args)
        bp = _load(args.blueprint)
        problems = list(cfg.resolve(bp.params).problems())
        if problems:
            raise ValueError(problems[0].message)
    except BlueprintError as exc:
        _err(f"{exc.field or 'blueprint'}: {exc}")
        return EXIT_USAGE
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.runs < 1 or args.workers < 1:
        _err("--runs and --workers must be at least 1")
        return EXIT_USAGE
    out = args.out or Path(os.environ.get(OUT_ENV, "runs"))
    base_seed = cfg.resolve(bp.params).seed
    jobs = []
    for k in range(args.runs):
        c = replace(cfg, seed=base_seed + k)
        jobs.append((c, out if args.runs == 1 else out / f"run_{k:03d}"))
    try:
        if args.workers > 1 and args.runs > 1:
            with ProcessPoolExecutor(args.workers) as pool:
                results = list(pool.map(_one_run, [bp] * len(jobs), *zip(*jobs)))
        else:
            results = [_one_run(bp, c, o) for c, o in jobs]
    except SimulationError as exc:
        _err(f"invariant violated: {exc}")
        return EXIT_FAIL
    for (c, o), (ok, summary) in zip(jobs, results):
        if args.runs > 1:
            print(f"== seed {c.seed} -> {o}")
        print(summary, end="")
    return EXIT_OK if all(ok for ok, _ in results) else EXIT_FAIL


def cmd_validate(args) -> int:
    findings = validate_blueprint(args.blueprint)
    print(json.dumps([f.to_dict() for f in findings], indent=2, sort_keys=True))
    return EXIT_FAIL if findings else EXIT_OK


def cmd_replay(args) -> int:
    try:
        metrics = replay(args.events)
    except (OSError, ValueError, KeyError) as exc:
        _err(f"cannot replay {args.events}: {exc}")
        return EXIT_USAGE
    if args.out:
        args.out.write_text(metrics.to_json())
    print(metrics_summary(metrics), end="")
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "run": cmd_run, "validate": cmd_validate, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
