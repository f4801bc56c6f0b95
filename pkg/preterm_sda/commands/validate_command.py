"""Checks a dataset manifest without training anything."""

from preterm_sda.commands.base import Command, CommandExecResult, CommandOptions
from preterm_sda.commands.common import require_manifest
from preterm_sda.core.eeg_io import validate_manifest
from preterm_sda.utils.config import ExperimentConfig, config_hash


class ValidateCommand(Command):
    def get_name(self) -> str:
        return "validate"

    def get_description(self) -> str:
        return "Load every record and annotation of a manifest and report the entries that fail."

    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        manifest = require_manifest(config)
        report = validate_manifest(manifest, options.get("required_splits", ()))
        output = {"status": "ok" if report.ok else "invalid", "config_hash": config_hash(config), **report.to_dict()}
        if report.ok:
            return CommandExecResult(output=output)
        return CommandExecResult(
            output=output,
            error=f"{len(report.failures)} manifest problem(s) found",
            error_code=1,
        )
