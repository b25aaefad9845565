"""Command-line entry point: ``codepth {pretrain,online,eval,report}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from .config import METHOD_ALIASES, ConfigError, load_config


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--method", choices=sorted(METHOD_ALIASES), help="ft, reg, rep or prop")
    p.add_argument("--mode", choices=["stereo", "sfm"])
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codepth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("pretrain", help="shuffled multi-epoch pre-training")
    _common(p)
    p = sub.add_parser("online", help="single in-order pass over the online stream")
    _common(p)
    p.add_argument("--checkpoint", help="pre-trained checkpoint (default: the pretrain output for this seed)")
    p.add_argument("--resume", action="store_true", help="continue from the last periodic checkpoint")
    p = sub.add_parser("eval", help="evaluate a checkpoint on every held-out set")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("report", help="summary tables and normalised curves over completed runs")
    _common(p)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from . import runner

    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed,
            method=METHOD_ALIASES.get(args.method) if args.method else None,
            mode=args.mode,
            out=args.out,
        )
        if args.command == "pretrain":
            print(runner.cmd_pretrain(cfg))
        elif args.command == "online":
            print(runner.cmd_online(cfg, args.checkpoint, resume=args.resume))
        elif args.command == "eval":
            os.makedirs(cfg.out, exist_ok=True)
            out_csv = os.path.join(cfg.out, "eval.csv")
            row = runner.cmd_eval(cfg, args.checkpoint, out_csv)
            for cat, m in row.categories.items():
                if m is not None:
                    print(f"{cat:13s} rmse {m.rmse:.4f} abs_rel {m.abs_rel:.4f} d1 {m.delta_1:.4f}")
            print(out_csv)
        elif args.command == "report":
            for path in runner.cmd_report(cfg.out):
                print(path)
    except (ConfigError, ValueError, FileNotFoundError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"codepth {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
