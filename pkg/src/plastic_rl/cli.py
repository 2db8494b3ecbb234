"""Command-line front end: run experiments, build reports, benchmark,
print the board layout.

Exit codes: 0 success, 1 at least one run cell failed, 2 invalid
configuration or arguments.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys


def parse_seed_spec(text: str) -> list[int]:
    """Accept "3", "1,2,5" or inclusive ranges like "1..10"."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plastic-rl",
        description="Continual-RL benchmark: orthogonality-regularized "
                    "PPO/RPO agents on nonstationary tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every (config, seed) cell")
    run.add_argument("--config", required=True, help="TOML experiment config")
    run.add_argument("--seeds", help='override config seeds: "1..10" or "1,2,3"')
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="dotted-path config override")
    run.add_argument("--jobs", type=int, default=1, help="parallel run cells")
    run.add_argument("--out", help="output directory (default: config out_dir)")

    report = sub.add_parser("report", help="build CSV/SVG reports from run logs")
    report.add_argument("--kind", required=True,
                        choices=["profile", "curves", "diagnostics"])
    report.add_argument("--glob", required=True, dest="pattern",
                        help='run log glob, e.g. "runs/**/*.runlog"')
    report.add_argument("--out", required=True, help="report output directory")
    report.add_argument("--alpha", type=float, default=0.1,
                        help="confidence level parameter (bands hold with 1-alpha)")
    report.add_argument("--window", type=int, default=5,
                        help="trailing smoothing window for curves")

    bench = sub.add_parser("bench", help="measure regularizer runtime overhead")
    bench.add_argument("--config", required=True,
                       help="TOML config with reg.kind = 'parseval'")
    bench.add_argument("--repetitions", type=int, default=3)
    bench.add_argument("--steps", type=int, default=5000,
                       help="environment steps per repetition")
    bench.add_argument("--out", help="optional JSON report path")

    sub.add_parser("layout", help="print the gridworld board as ASCII")
    return parser


def _cmd_run(args) -> int:
    from . import config as config_mod
    from . import runner

    try:
        cfg = config_mod.load(args.config)
        if args.overrides:
            cfg = config_mod.apply_overrides(cfg, args.overrides)
    except config_mod.ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    seeds = parse_seed_spec(args.seeds) if args.seeds else None
    results = runner.run_many(cfg, out_dir=args.out, jobs=args.jobs, seeds=seeds)
    failed = 0
    for res in results:
        status = "ok" if res["ok"] else f"FAILED ({res['reason']})"
        print(f"{res['name']} seed {res['seed']}: {status}")
        failed += 0 if res["ok"] else 1
    return 1 if failed else 0


def _cmd_report(args) -> int:
    from . import report as report_mod

    paths = sorted(glob.glob(args.pattern, recursive=True))
    if not paths:
        print(f"no run logs match {args.pattern!r}", file=sys.stderr)
        return 2
    logs = report_mod.load_logs(paths)
    if args.kind == "profile":
        written = report_mod.profile_report(logs, args.out, alpha=args.alpha)
    elif args.kind == "curves":
        written = report_mod.curves_report(logs, args.out, window=args.window,
                                           alpha=args.alpha)
    else:
        written = report_mod.diagnostics_report(logs, args.out)
    for path in written:
        print(path)
    return 0


def _cmd_bench(args) -> int:
    from . import config as config_mod
    from . import runner

    try:
        cfg = config_mod.load(args.config)
        result = runner.bench(cfg, repetitions=args.repetitions, steps=args.steps)
    except config_mod.ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    for label, arm in result["arms"].items():
        print(f"{label}: median {arm['median_per_update_seconds'] * 1e3:.2f} ms/update, "
              f"{arm['steps_per_second']:.0f} steps/s")
    print(f"overhead: {result['overhead_pct']:+.1f}%")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2)
        print(args.out)
    return 0


def main(argv=None) -> int:
    # keep worker BLAS single-threaded: reproducible and no oversubscription
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "layout":
        from . import envs

        print(envs.render_ascii())
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
