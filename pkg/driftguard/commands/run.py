import argparse
import logging

from driftguard.services.harness import run_experiment
from driftguard.storage import load_config

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("run", help="Run every cell of an experiment config")
    parser.add_argument("--config", required=True, help="Path to an experiment config (JSON)")
    parser.add_argument("--out", default=None, help="Run directory (overrides output_dir in the config)")
    parser.add_argument("--workers", type=int, default=None, help="Parallel cell workers")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.out:
        config = config.model_copy(update={"output_dir": args.out})
    run_dir = run_experiment(config, workers=args.workers)
    print(run_dir)
    return 0
