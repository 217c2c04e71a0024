"""Command-line interface: ``subdiv run | validate | list-presets``.

Exit codes are 0 on success, 2 for configuration errors and 3 for errors raised
while estimating.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import U64_MAX, load_config
from .errors import ConfigError, SubdivError
from .experiment import PRESETS, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3


def _u64(text):
    value = int(text, 0)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return value


def _threads(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("threads must be >= 0")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="subdiv",
                                     description="Subjective divergence profiles.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an effort sweep and write a profile")
    run.add_argument("--config", required=True, metavar="PATH")
    run.add_argument("--seed", type=_u64, metavar="U64", help="override the master seed")
    run.add_argument("--out", metavar="DIR", help="override the output directory")
    run.add_argument("--threads", type=_threads, default=1, metavar="N",
                     help="worker threads per estimate (0 = one per CPU)")
    val = sub.add_parser("validate", help="check a config and print its normalized form")
    val.add_argument("--config", required=True, metavar="PATH")
    sub.add_parser("list-presets", help="list model presets")
    return parser


def _report_config_error(exc):
    for path, msg in exc.errors:
        print(f"config error: {path or '<root>'}: {msg}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        for name, preset in PRESETS.items():
            print(f"{name}\t{preset.description}\t"
                  f"inference={','.join(preset.inference_kinds)}\t"
                  f"reference={','.join(preset.reference_kinds)}")
        return EXIT_OK
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    if args.command == "validate":
        from .config import serialize
        sys.stdout.write(serialize(config))
        return EXIT_OK
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    threads = args.threads if args.threads != 0 else (os.cpu_count() or 1)
    try:
        points, paths = run_experiment(config, threads=threads, out_dir=args.out)
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    except SubdivError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for p in points:
        e = p.estimate
        print(f"knob={p.knob} estimate={e.estimate:.6g} stderr={e.stderr:.3g} seed={p.seed}")
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
