from __future__ import annotations

import argparse
import sys

from cli.commands import cmd_estimate_k, cmd_eval, cmd_gcam_export, cmd_gen_data, cmd_train
from cli.experiments import EXPERIMENTS, cmd_experiment
from core.errors import ConfigError, OwsolError, TensorFormatError
from gcam.localizer import CENTROID_SOURCES, EVAL_SPACES
from libraries.sentry import report_exception
from libraries.utils import default_logger, get_workers
from trainer.config import MODES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _common(parser, config_required=False):
    parser.add_argument("--config", required=config_required, help="key=value run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    parser.add_argument("--workers", type=int, default=None, help="worker threads (fallback: OWSOL_WORKERS)")


def _evaluation(parser):
    parser.add_argument("--checkpoint", required=True, help="checkpoint directory or run directory")
    parser.add_argument("--split", default="test", choices=("labeled", "unlabeled", "val", "test"))
    parser.add_argument("--dataset", default=None, help="dataset directory (default: the one trained on)")
    parser.add_argument("--theta", type=float, default=None)
    parser.add_argument("--k", type=int, default=None, help="number of evaluation clusters")
    parser.add_argument("--eval-space", dest="eval_space", choices=EVAL_SPACES, default=None)
    parser.add_argument("--centroid-source", dest="centroid_source", choices=CENTROID_SOURCES, default=None)
    parser.add_argument("--theta-sweep", dest="theta_sweep", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="owsol", description="Open-world weakly supervised object localization")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate a synthetic open-world dataset")
    _common(gen, config_required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    train = commands.add_parser("train", help="train an encoder")
    _common(train, config_required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--dataset", default=None)
    train.add_argument("--mode", choices=MODES, default=None)
    train.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    train.set_defaults(func=cmd_train)

    evaluate = commands.add_parser("eval", help="score a checkpoint with the open-world protocol")
    _common(evaluate)
    _evaluation(evaluate)
    evaluate.add_argument("--out", default=None)
    evaluate.set_defaults(func=cmd_eval)

    export = commands.add_parser("gcam-export", help="write activation maps, heatmaps and boxes")
    _common(export)
    _evaluation(export)
    export.add_argument("--out", required=True)
    export.add_argument("--ranks", dest="ranks", type=int, nargs="*", default=None,
                        help="also export maps of the rank-th nearest centroids, e.g. 1 5 7")
    export.set_defaults(func=cmd_gcam_export)

    estimate = commands.add_parser("estimate-k", help="estimate the number of classes")
    _common(estimate)
    estimate.add_argument("--checkpoint", required=True)
    estimate.add_argument("--dataset", default=None)
    estimate.add_argument("--k-min", dest="k_min", type=int, required=True)
    estimate.add_argument("--k-max", dest="k_max", type=int, required=True)
    estimate.add_argument("--out", default=None)
    estimate.set_defaults(func=cmd_estimate_k)

    experiment = commands.add_parser("experiment", help="run a canned experiment")
    experiment.add_argument("name", choices=EXPERIMENTS)
    _common(experiment, config_required=True)
    experiment.add_argument("--dataset", default=None)
    experiment.add_argument("--out", required=True)
    experiment.set_defaults(func=cmd_experiment)

    return parser


def run(argv=None) -> int:
    """
    Parses argv and runs the command.

    Returns:
        int: 0 on success, 2 on a configuration error, 3 on an I/O or tensor-format error.
    """

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_CONFIG

    args.workers = get_workers(args.workers)
    try:
        return args.func(args)
    except (TensorFormatError, OSError) as err:
        default_logger.error(f"I/O failure: {err}")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, OwsolError) as err:
        default_logger.error(f"Configuration failure: {err}")
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:
        report_exception(err)
        raise
