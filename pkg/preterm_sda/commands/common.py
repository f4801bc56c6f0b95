"""Helpers shared by the subcommands."""

from collections.abc import Sequence
from pathlib import Path

from preterm_sda.core.dataset import PreparedRecord, prepare_split
from preterm_sda.core.eeg_io import DatasetManifest, Split, load_manifest
from preterm_sda.core.errors import CommandError
from preterm_sda.core.infer import GaRoutedModel, Model, ProbabilityTrace, moving_average, trace_from_batch
from preterm_sda.core.train import load_model
from preterm_sda.utils.config import ExperimentConfig
from preterm_sda.utils.dependencies import get_executor


def require_manifest(config: ExperimentConfig) -> DatasetManifest:
    if not config.paths.manifest:
        raise CommandError("A dataset manifest is required (paths.manifest or --manifest)")
    return load_manifest(config.paths.manifest)


def output_dir(config: ExperimentConfig, *parts: str) -> Path:
    path = Path(config.paths.output_dir, *parts)
    path.mkdir(parents=True, exist_ok=True)
    return path


def prepare_for_training(config: ExperimentConfig, manifest: DatasetManifest, splits: Sequence[Split]) -> list[PreparedRecord]:
    train = config.train
    return prepare_split(
        manifest,
        splits,
        stride_s=train.stride_s,
        label_threshold=train.label_threshold,
        edge_margin_s=train.edge_margin_s,
        executor=get_executor(),
        cache_dir=Path(config.paths.cache_dir) if config.paths.cache_dir else None,
    )


def prepare_for_inference(config: ExperimentConfig, manifest: DatasetManifest, splits: Sequence[Split]) -> list[PreparedRecord]:
    return prepare_split(
        manifest,
        splits,
        stride_s=config.infer.stride_s,
        label_threshold=config.train.label_threshold,
        edge_margin_s=0.0,
        executor=get_executor(),
        cache_dir=Path(config.paths.cache_dir) if config.paths.cache_dir else None,
    )


def load_evaluation_model(config: ExperimentConfig) -> Model | GaRoutedModel:
    """The GA-routed models when ``paths.group_models`` is set, otherwise ``paths.model``."""
    if config.paths.group_models:
        return GaRoutedModel({int(k): load_model(v) for k, v in config.paths.group_models.items()})
    if not config.paths.model:
        raise CommandError("A model is required (paths.model or --model)")
    return load_model(config.paths.model)


def raw_traces(model: Model | GaRoutedModel, records: Sequence[PreparedRecord], batch_size: int) -> list[ProbabilityTrace]:
    traces = []
    for record in records:
        if isinstance(model, GaRoutedModel):
            traces.append(model.trace_from_batch(record.batch, record.duration_s, batch_size))
        else:
            traces.append(trace_from_batch(model, record.batch, record.duration_s, batch_size))
    return traces


def smooth_all(traces: Sequence[ProbabilityTrace], width: int) -> list[ProbabilityTrace]:
    return [moving_average(trace, width) for trace in traces]
