"""
Shared providers for the CLI: configuration, worker pool, console and commands.
"""

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from functools import lru_cache
from typing import TYPE_CHECKING

from rich.console import Console

from preterm_sda.utils.config import ServiceConfig

if TYPE_CHECKING:
    from preterm_sda.commands.base import CommandExecutor

logger = logging.getLogger(__name__)


@lru_cache
def get_base_config() -> ServiceConfig:
    """
    Retrieves the process configuration from environment variables.

    Returns:
        A cached instance of the ServiceConfig.
    """
    return ServiceConfig()


@lru_cache
def get_executor() -> Executor | None:
    """Thread pool capped by SDA_THREADS; None means run in the calling thread."""
    threads = get_base_config().SDA_THREADS
    if threads <= 1:
        return None
    logger.info("Initializing thread pool with %d workers.", threads)
    return ThreadPoolExecutor(max_workers=threads, thread_name_prefix="sda")


@lru_cache
def get_console() -> Console:
    """Console for human-facing summaries; stdout is reserved for command results."""
    return Console(stderr=True)


# --- Command Providers ---
# Commands import the providers above, so they are imported on first use.


@lru_cache
def get_command_executor() -> "CommandExecutor":
    """Returns a cached executor holding one instance of every command."""
    from preterm_sda.commands.base import CommandExecutor
    from preterm_sda.commands.eval_command import EvalCommand
    from preterm_sda.commands.fuse_command import FuseCommand
    from preterm_sda.commands.synth_command import SynthCommand
    from preterm_sda.commands.train_command import TrainCommand
    from preterm_sda.commands.validate_command import ValidateCommand

    logger.info("Initializing CommandExecutor singleton.")
    return CommandExecutor(
        [SynthCommand(), TrainCommand(), EvalCommand(), FuseCommand(), ValidateCommand()]
    )
