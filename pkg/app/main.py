import argparse
import logging
import os
import sys
from typing import Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from app import commands
from app.commands.dependencies import ConfigError
from app.model import CheckpointFormatError

load_dotenv()

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger("app")


def configure_logging(level: str | None = None) -> None:
    """stderr only; stdout is reserved for the JSON lines of ``stream``."""
    level = (level or os.getenv("VAP_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def create_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument(
        "--set", dest="overrides", action="append", metavar="SECTION.FIELD=VALUE",
        help="Override one config field; repeatable",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--checkpoint")
    common.add_argument("--log-level", dest="log_level")

    parser = argparse.ArgumentParser(
        prog="python -m app",
        description="Noise-robust voice activity projection: data, training, evaluation and simulation.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in commands.COMMANDS:
        command.add_parser(subparsers, [common])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG_ERROR
    configure_logging(args.log_level)

    logger.info("Startup: running %s", args.command)
    try:
        return args.handler(args)
    except (ValidationError, ConfigError, CheckpointFormatError) as exc:
        logger.error("Config error: %s", exc)
        return EXIT_CONFIG_ERROR
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME_ERROR
