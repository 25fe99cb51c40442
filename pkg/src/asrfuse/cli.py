"""Command-line entry point.

Subcommands: generate-data, train, train-lm, evaluate, sweep.  Exit codes:
0 success, 1 configuration error, 2 runtime failure.
"""

import argparse
import sys

from .config import ConfigError, load_config
from .decoding import ConfigError as FusionConfigError
from .experiment import (cmd_evaluate, cmd_generate_data, cmd_sweep,
                         train_e2e, train_lm)


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment YAML file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--output-dir", default=None,
                     help="override the config output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asrfuse",
        description="Desk-scale RNN-T/AED training, internal-LM training, "
                    "and LM-fusion evaluation.")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate-data", "write the synthetic source/target corpora"),
        ("train", "train an E2E model (standard or combined loss)"),
        ("train-lm", "train an LSTM language model on text"),
        ("evaluate", "fill the (loss x fusion method) WER grid"),
        ("sweep", "tune fusion weights on the dev set for one method"),
    ):
        _add_common(subs.add_parser(name, help=help_text))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "generate-data":
            cmd_generate_data(cfg)
        elif args.command == "train":
            train_e2e(cfg)
        elif args.command == "train-lm":
            train_lm(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
    except (ConfigError, FusionConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - map any failure to exit code 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
