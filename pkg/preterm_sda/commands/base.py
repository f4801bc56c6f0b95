"""Base classes for commands and command execution."""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

from preterm_sda.core.errors import SdaError
from preterm_sda.utils.config import ExperimentConfig

logger = logging.getLogger(__name__)

CommandOptions = dict[str, Any]


@dataclass
class CommandExecResult:
    """Intermediate result of a command execution."""

    output: dict[str, Any] | None = None
    error: str | None = None
    error_code: int = 0


@dataclass
class CommandResult:
    """Result of a command execution, as reported by the CLI."""

    name: str
    success: bool
    result: dict[str, Any] | None = None
    error: str | None = None
    error_type: str | None = None

    def error_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "status": "error",
            "command": self.name,
            "error": self.error,
            "error_type": self.error_type,
        }
        if self.result is not None:
            payload["details"] = self.result
        return payload


@dataclass
class CommandCall:
    name: str
    config: ExperimentConfig
    options: CommandOptions = field(default_factory=dict)


class Command(ABC):
    """Base class for all subcommands."""

    @cached_property
    def name(self) -> str:
        return self.get_name()

    @cached_property
    def description(self) -> str:
        return self.get_description()

    @abstractmethod
    def get_name(self) -> str:
        """Get the command name."""

    @abstractmethod
    def get_description(self) -> str:
        """Get the command description."""

    @abstractmethod
    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        """Execute the command with a resolved configuration."""


class CommandExecutor:
    """Looks commands up by name and turns every failure into a CommandResult."""

    def __init__(self, commands: list[Command]):
        self._commands = commands
        self._command_map: dict[str, Command] | None = None

    def _normalize_name(self, name: str) -> str:
        """Normalize command name by making it lowercase and removing underscores."""
        return name.lower().replace("_", "").replace("-", "")

    @property
    def commands(self) -> dict[str, Command]:
        if self._command_map is None:
            self._command_map = {self._normalize_name(c.name): c for c in self._commands}
        return self._command_map

    def run(self, call: CommandCall) -> CommandResult:
        normalized_name = self._normalize_name(call.name)
        if normalized_name not in self.commands:
            return CommandResult(
                name=call.name,
                success=False,
                error=f"Command '{call.name}' not found. Available commands: {[c.name for c in self._commands]}",
                error_type="CommandError",
            )

        command = self.commands[normalized_name]
        try:
            exec_result = command.execute(call.config, call.options)
        except SdaError as e:
            logger.error("Command '%s' failed: %s", call.name, e.message, exc_info=True)
            return CommandResult(call.name, False, error=e.message, error_type=type(e).__name__)
        except Exception as e:
            logger.error("Unexpected error in command '%s'", call.name, exc_info=True)
            return CommandResult(
                call.name,
                False,
                error=f"Error executing command '{call.name}': {e}",
                error_type=type(e).__name__,
            )
        return CommandResult(
            name=call.name,
            success=exec_result.error_code == 0,
            result=exec_result.output,
            error=exec_result.error,
            error_type=None if exec_result.error_code == 0 else "CommandError",
        )
