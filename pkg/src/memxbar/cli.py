"""Command line: ``memxbar run <config>`` and ``memxbar validate <config>``."""
from __future__ import annotations

import argparse
import sys

from .experiment import ConfigError, load_config, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memxbar", description="Memristive crossbar training experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "train and evaluate every sweep point"),
                        ("validate", "check a config without running it")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        if name == "run":
            sp.add_argument("--out", default=None, help="output directory (default: [output] dir)")
            sp.add_argument("--workers", type=int, default=1, help="parallel sweep points")
            sp.add_argument("--cost", action="store_true", help="write an area/power estimate")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # `--validate <config>` is accepted as a spelling of the validate command
    if argv and argv[0] == "--validate":
        argv[0] = "validate"
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"{args.config}: ok, {len(cfg.points)} point(s)")
        return 0
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        summary = run(cfg, out_dir=args.out, workers=args.workers, cost=args.cost)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in summary["rows"]:
        m = row["mean"]
        print(f"{row['group']:>10} eta={row['eta']:<5g} off={row['offset_frac']:<4g} "
              f"mis={row['mismatch_frac']:<5g} part={row['partition'] or '-':<4} "
              f"test thr={m['test_thresholded']:6.2f}% raw={m['test_unthresholded']:6.2f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
