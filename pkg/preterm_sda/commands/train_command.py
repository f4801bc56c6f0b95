"""Trains a base model, an ensemble, or a GA-specific ensemble."""

import logging

import numpy as np

from preterm_sda.commands.base import Command, CommandExecResult, CommandOptions
from preterm_sda.commands.common import output_dir, prepare_for_training, require_manifest
from preterm_sda.core.errors import CommandError
from preterm_sda.core.net import init_params
from preterm_sda.core.train import (
    ARCHITECTURES,
    EnsembleModel,
    ga_group,
    train_ensemble,
    train_ga_specific,
    train_model,
)
from preterm_sda.utils.config import ExperimentConfig, config_hash
from preterm_sda.utils.constants import CHECKPOINT_SUFFIX

logger = logging.getLogger(__name__)


class TrainCommand(Command):
    def get_name(self) -> str:
        return "train"

    def get_description(self) -> str:
        return (
            "Train according to --mode: base (one model, val split for early stopping), "
            "ensemble (three models with different held-out records), ga_transfer (GA-weighted "
            "fine-tuning of a pretrained ensemble with LARS) or ga_scratch (in-group records only)."
        )

    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        if config.mode in ("ga_transfer", "ga_scratch") and config.ga.group is None:
            raise CommandError(f"--mode {config.mode} requires --group 1, 2 or 3")
        if config.mode == "ga_transfer" and not config.paths.pretrained:
            raise CommandError("--mode ga_transfer requires a --pretrained ensemble")

        manifest = require_manifest(config)
        out = output_dir(config)
        digest = config_hash(config)
        output = {"status": "ok", "config_hash": digest, "mode": config.mode}

        if config.mode == "base":
            train_records = prepare_for_training(config, manifest, ["train"])
            val_records = prepare_for_training(config, manifest, ["val"])
            architecture = ARCHITECTURES[config.train.architecture]
            init = init_params(config.train.seed, architecture, np.dtype(config.train.dtype))
            checkpoint = train_model(
                [r.batch for r in train_records], [r.batch for r in val_records], config.train, init, "base"
            )
            path = out / f"base{CHECKPOINT_SUFFIX}"
            checkpoint.save(path)
            checkpoint.write_log(out / "base.log.csv")
            output.update(model=str(path), val_aucs=[checkpoint.val_auc], best_epochs=[checkpoint.epoch])
            return CommandExecResult(output=output)

        batches = [r.batch for r in prepare_for_training(config, manifest, ["train", "val"])]
        if config.mode == "ensemble":
            ensemble = train_ensemble(batches, config.train)
            stem = "ensemble"
        else:
            group = ga_group(config.ga.group, config.ga.decay_span_weeks)
            pretrained = EnsembleModel.load(config.paths.pretrained) if config.mode == "ga_transfer" else None
            ensemble = train_ga_specific(batches, group, pretrained, config.train)
            stem = f"ga{group.group_id}_{'transfer' if pretrained else 'scratch'}"

        path = ensemble.save(out, stem, extra={"config_hash": digest, "mode": config.mode})
        output.update(
            model=str(path),
            val_aucs=[m.val_auc for m in ensemble.members],
            best_epochs=[m.epoch for m in ensemble.members],
            val_record_ids=[list(m.val_record_ids) for m in ensemble.members],
        )
        return CommandExecResult(output=output)
