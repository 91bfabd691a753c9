import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

# Local overrides (.env.local) win over the shared .env; real environment variables win over both.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env.local")
load_dotenv(Path.cwd() / ".env.local")
load_dotenv(BASE_DIR / ".env")

from driftguard import __version__
from driftguard.commands import fetch_data, monitor, run, verify_bounds
from driftguard.errors import DriftGuardError
from driftguard.settings import reload_settings

logger = logging.getLogger(__name__)

COMMANDS = (run, verify_bounds, monitor, fetch_data)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftguard",
        description="Drift-aligned tangent regularization experiments, bound checks and hazard monitoring",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides DRIFTGUARD_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are configuration errors here.
        return 0 if exc.code in (0, None) else 1

    settings = reload_settings()
    _configure_logging((args.log_level or settings.log_level).upper())
    try:
        return int(args.handler(args) or 0)
    except DriftGuardError as exc:
        logger.error("%s failed: %s", args.command, exc.detail, exc_info=logger.isEnabledFor(logging.DEBUG))
        return exc.exit_code


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
