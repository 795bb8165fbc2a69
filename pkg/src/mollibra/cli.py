"""Command-line interface: ``mollibra run|bench|ablate|report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import bench
from .config import ConfigError, RunConfig, config_from_dict, read_toml

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--preset", help="named preset used when no --config is given "
                        "(mollibra, tripp_gp_bo, molleo)")
    common.add_argument("--out", type=Path, default=Path("results"), help="results directory")
    common.add_argument("--seed", type=int, action="append", default=None,
                        help="seed override; repeat for several seeds")
    common.add_argument("--jobs", type=int, default=1, help="parallel runs for bench/ablate")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = argparse.ArgumentParser(prog="mollibra", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="execute one optimization run")
    sub.add_parser("bench", parents=[common], help="run tasks x seeds for one configuration")
    sub.add_parser("ablate", parents=[common], help="run the multi-fingerprint x critic grid")
    rep = sub.add_parser("report", help="aggregate a results directory")
    rep.add_argument("results_dir", type=Path)
    rep.add_argument("--out", type=Path, default=None, help="where to write the summary")
    rep.add_argument("--quiet", action="store_true")
    return parser


def _load(args) -> tuple[RunConfig, dict[str, Any]]:
    """Parse and validate configuration; nothing touches an oracle before this returns."""
    if args.config is not None:
        data = read_toml(args.config)
    elif args.preset is not None:
        data = {"preset": args.preset}
    else:
        raise ConfigError("pass --config PATH or --preset NAME")
    bench_table = data.get("bench", {})
    if not isinstance(bench_table, dict) or set(bench_table) - {"tasks", "seeds", "jobs"}:
        raise ConfigError("[bench] accepts only tasks, seeds and jobs")
    cfg = config_from_dict(data)
    if args.seed:
        cfg = cfg.replace(seed=args.seed[0])
    tasks = list(bench_table.get("tasks", [cfg.task]))
    for t in tasks:
        if t not in bench.TASKS:
            raise ConfigError(f"unknown task {t!r}; choose from {sorted(bench.TASKS)}")
    if args.seed:
        seeds = list(args.seed)
    else:
        seeds = list(bench_table.get("seeds", [cfg.seed]))
    return cfg, {"tasks": tasks, "seeds": seeds, "jobs": bench_table.get("jobs")}


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def cmd_run(args) -> int:
    cfg, _ = _load(args)
    if args.seed and len(args.seed) > 1:
        raise ConfigError("run takes a single --seed; use bench for several")
    path = bench.run_path(args.out, cfg)
    record = bench.run_task(cfg, path)
    bench.write_meta(path, cfg, record)
    auc = bench.top10_auc(record.scores, cfg.budget)
    best = record.best()
    _say(args, f"task={cfg.task} seed={cfg.seed} calls={record.oracle_calls} "
               f"best={best.y:.4f} top10_auc={auc:.4f} smiles={best.mol.canonical} out={path}")
    return EXIT_OK


def _jobs(args, extra) -> int:
    return args.jobs if args.jobs != 1 or extra["jobs"] is None else int(extra["jobs"])


def _print_cells(args, cells) -> int:
    failed = 0
    for c in cells:
        failed += len(c.errors)
        _say(args, f"{c.task:24s} {c.label:18s} n={len(c.aucs)} "
                   f"top10_auc={c.mean:.4f} ± {c.std:.4f}")
    if failed:
        print(f"{failed} run(s) failed; see report.json", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_bench(args) -> int:
    cfg, extra = _load(args)
    if not extra["seeds"]:
        raise ConfigError("no seeds given")
    label = args.preset or (args.config.stem if args.config else "config")
    cells = bench.run_matrix(extra["tasks"], {label: cfg}, extra["seeds"], args.out,
                             jobs=_jobs(args, extra))
    paths = bench.write_report(cells, args.out, "bench")
    _say(args, f"wrote {paths[0]} and {paths[1]}")
    return _print_cells(args, cells)


def cmd_ablate(args) -> int:
    cfg, extra = _load(args)
    if not extra["seeds"]:
        raise ConfigError("no seeds given")
    cells = bench.run_matrix(extra["tasks"], bench.ablation_configs(cfg), extra["seeds"],
                             args.out, jobs=_jobs(args, extra))
    paths = bench.write_report(cells, args.out, "ablation")
    _say(args, f"wrote {paths[0]} and {paths[1]}")
    return _print_cells(args, cells)


def cmd_report(args) -> int:
    try:
        rows = bench.summarize_results(args.results_dir)
    except (OSError, bench.MalformedResults, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or args.results_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "config_hash", "n", "mean", "std", "stall_events"])
        for r in rows:
            w.writerow([r["task"], r["config_hash"], r["n"], f"{r['mean']:.6f}",
                        f"{r['std']:.6f}", r["stall_events"]])
    for r in rows:
        _say(args, f"{r['task']:24s} {r['config_hash']} n={r['n']} "
                   f"top10_auc={r['mean']:.4f} ± {r['std']:.4f} stalls={r['stall_events']}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "ablate": cmd_ablate, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
