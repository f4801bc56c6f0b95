"""Selects a two-classifier fusion on validation data and scores it on the test split."""

import logging
from dataclasses import asdict
from typing import Any

from preterm_sda.commands.base import Command, CommandExecResult, CommandOptions
from preterm_sda.commands.common import (
    output_dir,
    prepare_for_inference,
    raw_traces,
    require_manifest,
    smooth_all,
)
from preterm_sda.commands.eval_command import evaluate_traces
from preterm_sda.core.errors import CommandError
from preterm_sda.core.infer import fuse, moving_average, save_trace, select_fusion
from preterm_sda.core.metrics import auc_concat
from preterm_sda.core.train import load_model
from preterm_sda.utils.config import ExperimentConfig, config_hash
from preterm_sda.utils.reports import write_csv, write_json

logger = logging.getLogger(__name__)


class FuseCommand(Command):
    def get_name(self) -> str:
        return "fuse"

    def get_description(self) -> str:
        return (
            "Sweep the fusion weight of two classifiers (preterm first, term second) on the val "
            "split, then apply the best arithmetic or geometric fusion to the test split."
        )

    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        if len(config.paths.classifiers) != 2:
            raise CommandError("fuse needs exactly two classifiers (paths.classifiers or --classifier twice)")
        manifest = require_manifest(config)
        models = [load_model(path) for path in config.paths.classifiers]
        out = output_dir(config, "fuse")
        digest = config_hash(config)
        batch_size = config.infer.batch_size
        width = config.infer.smooth_width

        val_records = prepare_for_inference(config, manifest, ["val"])
        val_labels = [r.batch.labels for r in val_records]
        val_traces = [raw_traces(model, val_records, batch_size) for model in models]
        selection = select_fusion(val_traces, val_labels, config.fusion.grid_step)
        selection.spec.save(out / "fusion_spec.json")
        write_csv(out / "fusion_sweep.csv", ["alpha", "method", "val_auc"], map(asdict, selection.sweep))

        test_records = prepare_for_inference(config, manifest, ["test"])
        test_labels = [r.batch.labels for r in test_records]
        test_traces = [raw_traces(model, test_records, batch_size) for model in models]
        if config.fusion.smooth_before_fusion:
            smoothed = [smooth_all(traces, width) for traces in test_traces]
            fused = [fuse(pair, selection.spec) for pair in zip(*smoothed, strict=True)]
        else:
            fused = [moving_average(fuse(pair, selection.spec), width) for pair in zip(*test_traces, strict=True)]
            smoothed = [smooth_all(traces, width) for traces in test_traces]
        for trace in fused:
            save_trace(trace, output_dir(config, "fuse", "traces") / f"{trace.record_id}.csv")

        report = evaluate_traces(fused, test_records, config.eval, digest, out, prefix="fused_")
        report.extra.update(
            fusion=selection.spec.to_dict(),
            fusion_val_auc=selection.val_auc,
            classifier_val_aucs=[auc_concat(zip(traces, val_labels, strict=True)) for traces in val_traces],
            classifier_test_aucs=[auc_concat(zip(traces, test_labels, strict=True)) for traces in smoothed],
        )
        output: dict[str, Any] = {"status": "ok", **report.to_dict()}
        write_json(out / "report.json", output)
        output["report"] = str(out / "report.json")
        output["fusion_spec"] = str(out / "fusion_spec.json")
        return CommandExecResult(output=output)
