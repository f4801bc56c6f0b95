"""Probability traces: prediction, moving-average smoothing and classifier fusion."""

import csv
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Union

import numpy as np

from preterm_sda.core.dsp import WindowBatch, segment, weak_labels
from preterm_sda.core.eeg_io import AnnotationSet, EegRecord
from preterm_sda.core.errors import FusionError, ShapeError, UndefinedMetricError
from preterm_sda.core.metrics import auc_concat
from preterm_sda.core.net import NetworkParams, predict_proba
from preterm_sda.core.train import EnsembleModel, ModelCheckpoint, group_of
from preterm_sda.utils.constants import WINDOW_S

logger = logging.getLogger(__name__)

Stage = Literal["raw", "smoothed", "fused"]
FusionMethod = Literal["arithmetic", "geometric"]
GEOMETRIC_FLOOR = 1e-9

Model = Union[NetworkParams, ModelCheckpoint, EnsembleModel]


@dataclass(frozen=True, eq=False)
class ProbabilityTrace:
    record_id: str
    stride_s: float
    start_times_s: np.ndarray
    probs: np.ndarray
    stage: Stage = "raw"
    record_duration_s: float = 0.0

    def __post_init__(self) -> None:
        if self.probs.shape != self.start_times_s.shape or self.probs.ndim != 1:
            raise ShapeError(f"Trace {self.record_id}: probs and start times must be aligned 1-D arrays")
        if self.probs.size and (self.probs.min() < 0.0 or self.probs.max() > 1.0):
            raise ValueError(f"Trace {self.record_id}: probabilities outside [0, 1]")
        if self.probs.size > 1 and not np.allclose(np.diff(self.start_times_s), self.stride_s):
            raise ValueError(f"Trace {self.record_id}: start times must advance by a constant stride")
        if self.record_duration_s <= 0 and self.probs.size:
            object.__setattr__(self, "record_duration_s", float(self.start_times_s[-1] + WINDOW_S))

    def __len__(self) -> int:
        return int(self.probs.size)

    def with_probs(self, probs: np.ndarray, stage: Stage) -> "ProbabilityTrace":
        return replace(self, probs=np.asarray(probs, dtype=np.float64), stage=stage)


def _members(model: Model) -> list[NetworkParams]:
    if isinstance(model, EnsembleModel):
        return [m.params for m in model.members]
    if isinstance(model, ModelCheckpoint):
        return [model.params]
    return [model]


def predict_windows(model: Model, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Seizure probability per window; ensembles average their members."""
    per_member = [predict_proba(params, windows, batch_size) for params in _members(model)]
    return np.clip(np.mean(per_member, axis=0), 0.0, 1.0)


def trace_from_batch(
    model: Model, batch: WindowBatch, record_duration_s: float, batch_size: int = 256
) -> ProbabilityTrace:
    return ProbabilityTrace(
        record_id=batch.record_id,
        stride_s=batch.stride_s,
        start_times_s=np.asarray(batch.start_times_s, dtype=np.float64),
        probs=predict_windows(model, batch.windows, batch_size),
        stage="raw",
        record_duration_s=record_duration_s,
    )


def predict_trace(
    model: Model, record_32hz: EegRecord, stride_s: float = 1.0, batch_size: int = 256
) -> ProbabilityTrace:
    """Raw trace over every window of a preprocessed record, edge windows included."""
    batch = segment(record_32hz, WINDOW_S, stride_s, edge_margin_s=0.0)
    return trace_from_batch(model, batch, record_32hz.duration_s, batch_size)


@dataclass
class GaRoutedModel:
    """Routes each record to the model of the GA group containing its GA."""

    group_models: Mapping[int, Model]

    def model_for(self, ga_weeks: float) -> Model:
        group_id = group_of(ga_weeks)
        if group_id not in self.group_models:
            raise FusionError(f"No model for GA group {group_id} (GA {ga_weeks})")
        return self.group_models[group_id]

    def predict_trace(self, record_32hz: EegRecord, stride_s: float = 1.0, batch_size: int = 256) -> ProbabilityTrace:
        return predict_trace(self.model_for(record_32hz.ga_weeks), record_32hz, stride_s, batch_size)

    def trace_from_batch(self, batch: WindowBatch, record_duration_s: float, batch_size: int = 256) -> ProbabilityTrace:
        return trace_from_batch(self.model_for(batch.ga_weeks), batch, record_duration_s, batch_size)


def trace_labels(trace: ProbabilityTrace, annotations: AnnotationSet, threshold: float = 0.5) -> np.ndarray:
    return weak_labels(trace.start_times_s, annotations, WINDOW_S, threshold)


def moving_average(trace: ProbabilityTrace, width_windows: int) -> ProbabilityTrace:
    """Centered moving mean; near the edges only the available values are averaged."""
    if width_windows < 1 or width_windows % 2 == 0:
        raise ValueError(f"Moving-average width must be odd and >= 1, got {width_windows}")
    if width_windows == 1 or len(trace) == 0:
        return trace.with_probs(trace.probs.copy(), "smoothed")
    n = len(trace)
    half = width_windows // 2
    index = np.arange(n)
    lo = np.maximum(index - half, 0)
    hi = np.minimum(index + half + 1, n)
    csum = np.concatenate([[0.0], np.cumsum(trace.probs, dtype=np.float64)])
    means = (csum[hi] - csum[lo]) / (hi - lo)
    return trace.with_probs(np.clip(means, 0.0, 1.0), "smoothed")


# --- Fusion ---


@dataclass(frozen=True)
class FusionSpec:
    method: FusionMethod
    alphas: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.method not in ("arithmetic", "geometric"):
            raise FusionError(f"Unknown fusion method: {self.method}")
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or any(a < 0 for a in alphas) or abs(sum(alphas) - 1.0) > 1e-9:
            raise FusionError(f"Fusion weights must be non-negative and sum to 1, got {alphas}")
        object.__setattr__(self, "alphas", alphas)

    def to_dict(self) -> dict[str, object]:
        return {"method": self.method, "alphas": list(self.alphas)}

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "FusionSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(data["method"], tuple(data["alphas"]))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise FusionError(f"Cannot read fusion spec {path}: {e}") from e


def _check_aligned(traces: Sequence[ProbabilityTrace]) -> None:
    first = traces[0]
    for other in traces[1:]:
        if (
            other.record_id != first.record_id
            or other.stride_s != first.stride_s
            or len(other) != len(first)
            or not np.array_equal(other.start_times_s, first.start_times_s)
        ):
            raise FusionError(f"Traces {first.record_id} and {other.record_id} are not aligned")


def fuse(traces: Sequence[ProbabilityTrace], spec: FusionSpec) -> ProbabilityTrace:
    """Weighted arithmetic or geometric mean of aligned traces."""
    if not traces:
        raise FusionError("Nothing to fuse")
    if len(traces) != len(spec.alphas):
        raise FusionError(f"{len(traces)} traces but {len(spec.alphas)} fusion weights")
    _check_aligned(traces)

    if spec.method == "arithmetic":
        fused = np.zeros(len(traces[0]))
        for trace, alpha in zip(traces, spec.alphas, strict=True):
            if alpha > 0:
                fused = fused + alpha * trace.probs
    else:
        fused = np.ones(len(traces[0]))
        for trace, alpha in zip(traces, spec.alphas, strict=True):
            if alpha == 1.0:
                fused = fused * trace.probs
            elif alpha > 0:
                fused = fused * np.maximum(trace.probs, GEOMETRIC_FLOOR) ** alpha
    return traces[0].with_probs(np.clip(fused, 0.0, 1.0), "fused")


@dataclass(frozen=True)
class FusionSweepRow:
    alpha: float
    method: FusionMethod
    val_auc: float


@dataclass
class FusionSelection:
    spec: FusionSpec
    val_auc: float
    sweep: list[FusionSweepRow] = field(default_factory=list)


def alpha_grid(grid_step: float) -> np.ndarray:
    n = int(round(1.0 / grid_step))
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise FusionError(f"grid_step must divide 1 evenly, got {grid_step}")
    return np.arange(n + 1) / n


def select_fusion(
    val_traces_by_classifier: Sequence[Sequence[ProbabilityTrace]],
    val_labels: Sequence[np.ndarray],
    grid_step: float = 0.05,
) -> FusionSelection:
    """Grid search over the weight of the second classifier, for both fusion methods.

    The first classifier gets ``1 - alpha``. Ties keep the smaller alpha, and arithmetic
    wins over geometric at equal alpha.
    """
    if len(val_traces_by_classifier) != 2:
        raise FusionError(f"Fusion selection takes two classifiers, got {len(val_traces_by_classifier)}")
    first, second = val_traces_by_classifier
    if len(first) != len(second) or len(first) != len(val_labels):
        raise FusionError("Each classifier needs one validation trace per labelled record")
    all_labels = np.concatenate([np.asarray(y) for y in val_labels]) if val_labels else np.array([])
    if all_labels.size == 0 or all_labels.min() == all_labels.max():
        raise FusionError("Validation labels contain a single class")

    best: FusionSelection | None = None
    sweep: list[FusionSweepRow] = []
    for alpha in alpha_grid(grid_step):
        for method in ("arithmetic", "geometric"):
            spec = FusionSpec(method, (1.0 - float(alpha), float(alpha)))
            fused = [fuse((a, b), spec) for a, b in zip(first, second, strict=True)]
            try:
                auc = auc_concat(zip(fused, val_labels, strict=True))
            except UndefinedMetricError as e:
                raise FusionError(e.message) from e
            sweep.append(FusionSweepRow(float(alpha), method, auc))
            if best is None or auc > best.val_auc:
                best = FusionSelection(spec, auc)
    assert best is not None
    best.sweep = sweep
    logger.info("Selected %s fusion with alphas %s (val AUC %.4f)", best.spec.method, best.spec.alphas, best.val_auc)
    return best


def save_trace(trace: ProbabilityTrace, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["time_s", "prob", "stage"])
        for time_s, prob in zip(trace.start_times_s, trace.probs, strict=True):
            writer.writerow([repr(float(time_s)), repr(float(prob)), trace.stage])
