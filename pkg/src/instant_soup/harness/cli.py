"""``instant-soup`` command line: pretrain, prune, ims, mask-compare, sweep, report.

Exit codes: 0 success, 2 config error, 3 budget violation, 4 NaN loss.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..engine.training import NumericError
from ..ledger import BudgetExceeded
from ..pruning import ScheduleError
from . import runs
from .config import METHODS, SWEEP_AXES, ConfigError, load_config

OUT_ENV = "INSTANT_SOUP_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NUMERIC = 0, 2, 3, 4


def _add_common(p: argparse.ArgumentParser, method: bool = False) -> None:
    p.add_argument("--config", required=True, help="flat JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>-<hash>-s<seed>)")
    if method:
        p.add_argument("--method", help=f"one of: {', '.join(METHODS)}")


def build_parser() -> argparse.ArgumentParser:
    # argparse exits with 2 on usage errors, matching the config-error code
    parser = argparse.ArgumentParser(prog="instant-soup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("pretrain", help="dense pretraining"))
    _add_common(sub.add_parser("prune", help="run one pruning method"), method=True)
    _add_common(sub.add_parser("ims", help="instant model soup on the pretrained model"))
    _add_common(sub.add_parser("mask-compare", help="cosine similarity between method masks"))
    sw = sub.add_parser("sweep", help="ISP ablation over denoiser count or look-ahead steps")
    _add_common(sw)
    sw.add_argument("--axis", choices=SWEEP_AXES)
    sw.add_argument("--values", help="comma-separated integers")
    rp = sub.add_parser("report", help="collect run directories into CSV summaries")
    rp.add_argument("run_dirs", nargs="*")
    rp.add_argument("--out", help="report directory")
    return parser


def _out_dir(args, cfg, command: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    root = Path(os.environ.get(OUT_ENV, "runs"))
    tag = command if command != "prune" else f"prune-{cfg.method}"
    return root / f"{tag}-{cfg.config_hash()[:12]}-s{cfg.seed}"


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "runs")) / "report"
            rows = runs.cmd_report(args.run_dirs, out)
            print(f"report: {len(rows)} run(s) -> {out}")
            return EXIT_OK
        method = getattr(args, "method", None)
        if method is not None and method not in METHODS:
            parser.error(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
        cfg = load_config(args.config, seed=args.seed, method=method)
        out = _out_dir(args, cfg, args.command)
        if args.command == "pretrain":
            rec = runs.cmd_pretrain(cfg, out)
            print(json.dumps({"checkpoint": str(out / rec["checkpoint"]), "val_accuracy": rec["val_accuracy"]}))
        elif args.command == "prune":
            rec = runs.cmd_prune(cfg, out)
            print(json.dumps({k: rec["summary"][k] for k in ("method", "test_accuracy", "sparsity", "total_steps")}))
        elif args.command == "ims":
            rec = runs.cmd_ims(cfg, out)
            print(json.dumps({"val_before": rec["val_before"], "val_after": rec["val_after"]}))
        elif args.command == "mask-compare":
            rows = runs.cmd_mask_compare(cfg, out)
            print(f"mask-compare: {len(rows)} pair(s) -> {out / 'mask_similarity.csv'}")
        elif args.command == "sweep":
            values = None
            if args.values:
                try:
                    values = [int(v) for v in args.values.split(",")]
                except ValueError:
                    parser.error("--values must be comma-separated integers")
            rows = runs.cmd_sweep(cfg, out, args.axis, values)
            print(f"sweep: {len(rows)} point(s) -> {out / 'sweep.csv'}")
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())
