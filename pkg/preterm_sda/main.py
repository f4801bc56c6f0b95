"""
The main entry point for the preterm-sda command line.

This script handles environment loading, logging configuration, and CLI dispatch.
"""

import logging
import sys

from dotenv import load_dotenv


def setup_environment() -> bool:
    """
    Loads environment variables and configures application-wide logging.
    Logs go to stderr; stdout carries the JSON result of each command.
    """
    load_dotenv()  # Load environment variables from .env file.

    # Settings are read only after .env is loaded.
    from preterm_sda.utils.dependencies import get_base_config

    log_level = get_base_config().LOG_LEVEL.upper()
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    logging.getLogger(__name__).debug("Environment and logging configured.")
    return True


def run_cli() -> None:
    """
    Sets up the environment and runs the click group.
    """
    if not setup_environment():
        logging.critical("Initial environment setup failed. Exiting.")
        sys.exit(1)

    # Import after setup so the environment is loaded before any settings are read.
    from preterm_sda.cli import cli

    cli(obj={})


if __name__ == "__main__":
    run_cli()
