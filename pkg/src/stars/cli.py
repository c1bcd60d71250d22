"""Command-line front end.

Subcommands: train, ablate, eval, export-embeddings, ttest, summarize.
Exit status 0 on success, 1 on usage errors (bad arguments, missing or
malformed input files), 2 on runtime failures. Diagnostics go to stderr;
data outputs are CSV or plain text.
"""

from __future__ import annotations

import argparse
import glob as globlib
import os
import sys

from .config import load_config
from .stats import imbalance_summary, welch_ttest


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _mean_std(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected MEAN,STD, got {text!r}")
    return float(parts[0]), float(parts[1])


def build_parser():
    parser = _Parser(prog="stars", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override trainer.seed from the config")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ablate", help="train every .cfg in a directory and tabulate")
    p.add_argument("--configs", required=True, help="directory of .cfg files")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint's success rates")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-embeddings",
                       help="write unique features of visited states to CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-n", type=int, required=True, help="states per task")
    p.add_argument("--out", default="embeddings.csv")
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("ttest", help="two-sample t-test from summary statistics")
    p.add_argument("--a", type=_mean_std, required=True, metavar="MEAN,STD")
    p.add_argument("--b", type=_mean_std, required=True, metavar="MEAN,STD")
    p.add_argument("-n", type=int, required=True, help="runs per sample")
    p.set_defaults(func=_cmd_ttest)

    p = sub.add_parser("summarize",
                       help="cross-task imbalance summary over metrics files")
    p.add_argument("--glob", required=True, dest="pattern")
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p.set_defaults(func=_cmd_summarize)

    return parser


def _require_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"file not found: {path}")
    return path


def _cmd_train(args):
    from .trainer import train, write_checkpoint_file, write_metrics_file

    overrides = {"seed": args.seed} if args.seed is not None else None
    try:
        config = load_config(_require_file(args.config), overrides=overrides)
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    os.makedirs(args.out, exist_ok=True)
    result = train(config)
    metrics_path = write_metrics_file(result, args.out)
    ckpt_path = write_checkpoint_file(result, args.out)
    if result.metrics:
        last = result.metrics[-1]
        print(f"final mean success {last.sr_mean:.4f} "
              f"(cross-task std {last.sr_std:.4f})")
    print(f"wrote {metrics_path}")
    print(f"wrote {ckpt_path}")
    return 0


def _cmd_ablate(args):
    from .trainer import (ablation_to_csv, metrics_to_csv, run_ablation)

    if not os.path.isdir(args.configs):
        raise UsageError(f"config directory not found: {args.configs}")
    paths = sorted(globlib.glob(os.path.join(args.configs, "*.cfg")))
    if not paths:
        raise UsageError(f"no .cfg files in {args.configs}")
    try:
        configs = [load_config(p) for p in paths]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows, outputs = run_ablation(configs, max_workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    for (label, seed, metrics), config in zip(outputs, configs):
        run_dir = os.path.join(args.out, label)
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, f"metrics_{seed}.csv"), "w") as fh:
            metrics_to_csv(metrics, len(metrics[0].success) if metrics else 0, fh)
    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w") as fh:
        ablation_to_csv(rows, fh)
    for row in rows:
        print(f"{row['variant']}: best {row['best_sr_mean']:.4f} "
              f"± {row['best_sr_std']:.4f}, final std {row['final_std_mean']:.4f}")
    print(f"wrote {table_path}")
    return 0


def _cmd_eval(args):
    from .trainer import evaluate_checkpoint

    try:
        rates = evaluate_checkpoint(_require_file(args.ckpt),
                                    episodes=args.episodes, seed=args.seed)
    except ValueError as exc:
        raise UsageError(f"{args.ckpt}: {exc}") from exc
    for j, rate in enumerate(rates):
        print(f"task {j}: success {rate:.4f}")
    mean = sum(rates) / len(rates)
    print(f"mean success {mean:.4f}")
    return 0


def _cmd_export(args):
    from .autodiff import load_checkpoint
    from .trainer import export_embeddings

    if args.n < 0:
        raise UsageError("-n must be nonnegative")
    try:
        arrays = load_checkpoint(_require_file(args.ckpt))
        with open(args.out, "w") as fh:
            export_embeddings(arrays, args.n, fh, seed=args.seed)
    except ValueError as exc:
        raise UsageError(f"{args.ckpt}: {exc}") from exc
    print(f"wrote {args.out}")
    return 0


def _cmd_ttest(args):
    try:
        res = welch_ttest(args.a[0], args.a[1], args.b[0], args.b[1], args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"t = {res.t:.4f}")
    print(f"df = {res.df:.4f}")
    print(f"p = {res.p:.4f}")
    return 0


def _cmd_summarize(args):
    paths = sorted(globlib.glob(args.pattern))
    if not paths:
        raise UsageError(f"no files match {args.pattern!r}")
    try:
        summary = imbalance_summary(paths)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.out:
        with open(args.out, "w") as fh:
            summary.to_csv(fh)
        print(f"wrote {args.out}")
    else:
        summary.to_csv(sys.stdout)
    return 0


def cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"stars: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stars: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure
        print(f"stars: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli(sys.argv[1:]))
