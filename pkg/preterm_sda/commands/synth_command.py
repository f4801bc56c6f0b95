"""Generates a synthetic preterm EEG cohort."""

from collections import Counter
from pathlib import Path

from preterm_sda.commands.base import Command, CommandExecResult, CommandOptions
from preterm_sda.core.eeg_io import load_annotations
from preterm_sda.core.synth import generate_cohort
from preterm_sda.utils.config import ExperimentConfig, config_hash
from preterm_sda.utils.dependencies import get_executor


class SynthCommand(Command):
    def get_name(self) -> str:
        return "synth"

    def get_description(self) -> str:
        return "Write a synthetic cohort (records, annotations, metadata, manifest.json) to the output directory."

    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        out = Path(config.paths.output_dir)
        manifest = generate_cohort(config.synth, out, get_executor())
        n_events = sum(len(load_annotations(manifest.resolve(e.annotations))) for e in manifest.entries)
        splits = Counter(entry.split for entry in manifest.entries)
        return CommandExecResult(
            output={
                "status": "ok",
                "config_hash": config_hash(config),
                "manifest": str(out / "manifest.json"),
                "n_records": len(manifest.entries),
                "n_seizure_events": n_events,
                "records_by_split": dict(sorted(splits.items())),
            }
        )
