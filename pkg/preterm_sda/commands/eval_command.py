"""Evaluates a model on the test split: traces, AUC, ROC, detection curve, leave-one-out."""

import logging
from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

from preterm_sda.commands.base import Command, CommandExecResult, CommandOptions
from preterm_sda.commands.common import (
    load_evaluation_model,
    output_dir,
    prepare_for_inference,
    raw_traces,
    require_manifest,
    smooth_all,
)
from preterm_sda.core.dataset import PreparedRecord
from preterm_sda.core.errors import UndefinedMetricError
from preterm_sda.core.infer import ProbabilityTrace, save_trace
from preterm_sda.core.metrics import (
    MetricReport,
    MetricValue,
    auc_by_group,
    auc_concat,
    concatenate,
    confusion,
    default_thresholds,
    detection_curve,
    detection_rate_at,
    leave_one_out,
    roc_curve,
    sensitivity,
    specificity,
)
from preterm_sda.core.train import group_of
from preterm_sda.utils.config import EvalConfig, ExperimentConfig, config_hash
from preterm_sda.utils.reports import write_csv, write_json

logger = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5


def evaluate_traces(
    traces: Sequence[ProbabilityTrace],
    records: Sequence[PreparedRecord],
    eval_config: EvalConfig,
    digest: str,
    out: Path,
    prefix: str = "",
) -> MetricReport:
    """Epoch and event metrics for already-postprocessed traces; writes the CSV curves."""
    labels = [r.batch.labels for r in records]
    scores, all_labels = concatenate(zip(traces, labels, strict=True))
    counts = confusion(scores, all_labels, DECISION_THRESHOLD)
    roc = roc_curve(scores, all_labels)
    write_csv(out / f"{prefix}roc.csv", ["threshold", "sensitivity", "one_minus_specificity"], roc.rows())

    report = MetricReport(
        config_hash=digest,
        n_records=len(traces),
        n_windows=int(scores.size),
        auc=roc.auc,
        threshold=DECISION_THRESHOLD,
        sensitivity=sensitivity(counts),
        specificity=specificity(counts),
        operating_fdh=eval_config.operating_fdh,
        auc_by_group=auc_by_group(traces, labels, {r.record_id: group_of(r.ga_weeks) for r in records}),
    )

    event_pairs = [
        (trace, list(record.annotations))
        for trace, record in zip(traces, records, strict=True)
        if not eval_config.seizure_only or len(record.annotations)
    ]
    try:
        curve = detection_curve(
            [t for t, _ in event_pairs],
            [events for _, events in event_pairs],
            default_thresholds(eval_config.n_thresholds),
            pooled=eval_config.pooled_fdh,
            min_event_s=eval_config.min_event_s,
        )
    except UndefinedMetricError as e:
        logger.warning("No detection curve: %s", e.message)
        report.extra["detection_curve"] = MetricValue(None, e.message).to_dict()
    else:
        write_csv(out / f"{prefix}detection_curve.csv", ["threshold", "fd_per_hour", "detection_rate"], map(asdict, curve))
        if eval_config.operating_fdh is not None:
            report.operating_point = detection_rate_at(curve, eval_config.operating_fdh)

    if eval_config.loo:
        report.leave_one_out = leave_one_out(traces, labels)
        write_csv(out / f"{prefix}loo.csv", ["excluded_record_id", "auc", "reason"], map(asdict, report.leave_one_out))
    return report


class EvalCommand(Command):
    def get_name(self) -> str:
        return "eval"

    def get_description(self) -> str:
        return "Predict, smooth and score the test split; write traces, report.json and CSV curves."

    def execute(self, config: ExperimentConfig, options: CommandOptions) -> CommandExecResult:
        manifest = require_manifest(config)
        model = load_evaluation_model(config)
        records = prepare_for_inference(config, manifest, ["test"])
        out = output_dir(config, "eval")
        digest = config_hash(config)

        raw = raw_traces(model, records, config.infer.batch_size)
        smoothed = smooth_all(raw, config.infer.smooth_width)
        for trace in smoothed:
            save_trace(trace, output_dir(config, "eval", "traces") / f"{trace.record_id}.csv")

        report = evaluate_traces(smoothed, records, config.eval, digest, out)
        report.extra["auc_raw"] = auc_concat(zip(raw, [r.batch.labels for r in records], strict=True))
        report.extra["n_seizure_events"] = int(sum(len(r.annotations) for r in records))
        output: dict[str, Any] = {"status": "ok", **report.to_dict()}
        write_json(out / "report.json", output)
        output["report"] = str(out / "report.json")
        logger.info("Test AUC %.4f over %d records", report.auc, report.n_records)
        return CommandExecResult(output=output)