"""Epoch-based and event-based evaluation of seizure probability traces."""

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.stats import rankdata

from preterm_sda.core.errors import MetricError, UndefinedMetricError
from preterm_sda.utils.constants import WINDOW_S

if TYPE_CHECKING:
    from preterm_sda.core.infer import ProbabilityTrace

logger = logging.getLogger(__name__)

Event = tuple[float, float]


def _as_scores(trace_or_scores: Any) -> np.ndarray:
    return np.asarray(getattr(trace_or_scores, "probs", trace_or_scores), dtype=np.float64).reshape(-1)


def _as_labels(labels: Any) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64).reshape(-1)


# --- Epoch-based metrics ---


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricValue:
    """A ratio that may be undefined; ``reason`` says why when ``value`` is None."""

    value: float | None
    reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "reason": self.reason}


def confusion(trace: "ProbabilityTrace | np.ndarray", labels: np.ndarray, threshold: float) -> ConfusionCounts:
    scores = _as_scores(trace)
    labels = _as_labels(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"Trace has {scores.size} windows but {labels.size} labels were given")
    predicted = scores >= threshold
    actual = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def sensitivity(counts: ConfusionCounts) -> MetricValue:
    if counts.tp + counts.fn == 0:
        return MetricValue(None, "no positive windows (tp + fn = 0)")
    return MetricValue(counts.tp / (counts.tp + counts.fn))


def specificity(counts: ConfusionCounts) -> MetricValue:
    if counts.tn + counts.fp == 0:
        return MetricValue(None, "no negative windows (tn + fp = 0)")
    return MetricValue(counts.tn / (counts.tn + counts.fp))


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with tie-averaged ranks; ties between classes count one half."""
    scores = _as_scores(scores)
    labels = _as_labels(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores but {labels.size} labels")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC is undefined with {n_pos} positive and {n_neg} negative windows"
        )
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def concatenate(traces_with_labels: Iterable[tuple[Any, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    scores: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for trace, record_labels in traces_with_labels:
        record_scores = _as_scores(trace)
        record_labels = _as_labels(record_labels)
        if record_scores.shape != record_labels.shape:
            raise MetricError(
                f"Trace {getattr(trace, 'record_id', '?')} has {record_scores.size} windows "
                f"but {record_labels.size} labels"
            )
        scores.append(record_scores)
        labels.append(record_labels)
    if not scores:
        raise UndefinedMetricError("No records to evaluate")
    return np.concatenate(scores), np.concatenate(labels)


def auc_concat(traces_with_labels: Iterable[tuple[Any, np.ndarray]]) -> float:
    """AUC over the concatenation of every record's windows."""
    return auc_score(*concatenate(traces_with_labels))


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    sensitivity: float
    one_minus_specificity: float


@dataclass(frozen=True)
class RocCurve:
    points: list[RocPoint]
    auc: float

    def rows(self) -> list[dict[str, float]]:
        return [asdict(point) for point in self.points]


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """One point per distinct score plus one above the maximum, ascending by threshold."""
    scores = _as_scores(scores)
    labels = _as_labels(labels)
    auc = auc_score(scores, labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels != 1])
    thresholds = np.append(np.unique(scores), np.inf)
    # Count of values >= t for each threshold t.
    tpr = (pos.size - np.searchsorted(pos, thresholds, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    points = [
        RocPoint(float(t), float(s), float(f)) for t, s, f in zip(thresholds, tpr, fpr, strict=True)
    ]
    return RocCurve(points=points, auc=auc)


# --- Event-based metrics ---


@dataclass(frozen=True)
class EventMatchResult:
    detected_true_events: int
    total_true_events: int
    false_detection_events: int
    total_hours: float

    def __post_init__(self) -> None:
        if self.detected_true_events > self.total_true_events:
            raise MetricError("More detected events than true events")
        if self.total_hours <= 0:
            raise MetricError("Recording duration must be positive")

    @property
    def fd_per_hour(self) -> float:
        return self.false_detection_events / self.total_hours

    def __add__(self, other: "EventMatchResult") -> "EventMatchResult":
        return EventMatchResult(
            self.detected_true_events + other.detected_true_events,
            self.total_true_events + other.total_true_events,
            self.false_detection_events + other.false_detection_events,
            self.total_hours + other.total_hours,
        )


def merge_intervals(intervals: Iterable[Event]) -> list[Event]:
    merged: list[list[float]] = []
    for onset, offset in sorted(intervals):
        if merged and onset <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], offset)
        else:
            merged.append([onset, offset])
    return [(a, b) for a, b in merged]


def binarize_events(
    trace: "ProbabilityTrace",
    threshold: float,
    min_event_s: float | None = None,
    window_s: float = WINDOW_S,
) -> list[Event]:
    """Maximal runs of windows at or above ``threshold``, each window spanning its full length.

    Overlapping or abutting window spans are merged into one event. Events shorter than
    ``min_event_s`` (default: the trace stride) are dropped.
    """
    probs = _as_scores(trace)
    starts = np.asarray(trace.start_times_s, dtype=np.float64)
    min_event_s = trace.stride_s if min_event_s is None else min_event_s
    positive = starts[probs >= threshold]
    events = merge_intervals((float(s), float(s + window_s)) for s in positive)
    return [(onset, offset) for onset, offset in events if offset - onset >= min_event_s]


def _overlap_matrix(predicted: Sequence[Event], truth: Sequence[Event]) -> np.ndarray:
    if not predicted or not truth:
        return np.zeros((len(predicted), len(truth)), dtype=bool)
    pred = np.asarray(predicted, dtype=np.float64)
    true = np.asarray(truth, dtype=np.float64)
    inter = np.minimum(pred[:, None, 1], true[None, :, 1]) - np.maximum(pred[:, None, 0], true[None, :, 0])
    return inter > 0


def match_events(predicted: Sequence[Event], truth: Sequence[Event], record_hours: float) -> EventMatchResult:
    """Any-overlap matching between predicted and annotated seizure events."""
    overlaps = _overlap_matrix(list(predicted), list(truth))
    detected = int(overlaps.any(axis=0).sum()) if len(truth) else 0
    false = int((~overlaps.any(axis=1)).sum()) if len(predicted) else 0
    return EventMatchResult(
        detected_true_events=detected,
        total_true_events=len(truth),
        false_detection_events=false,
        total_hours=float(record_hours),
    )


@dataclass(frozen=True)
class DetectionPoint:
    threshold: float
    fd_per_hour: float
    detection_rate: float


def default_thresholds(n: int = 201) -> np.ndarray:
    """Evenly spaced thresholds over [0, 1] plus one just above 1 (nothing detected)."""
    return np.append(np.linspace(0.0, 1.0, n), np.nextafter(1.0, 2.0))


def detection_curve(
    traces: Sequence["ProbabilityTrace"],
    truths: Sequence[Sequence[Event]],
    thresholds: np.ndarray | None = None,
    pooled: bool = True,
    min_event_s: float | None = None,
) -> list[DetectionPoint]:
    """Detection rate against false detections per hour, one point per threshold.

    Pooled statistics sum events and hours over records; otherwise FD/h is the mean of the
    per-record rates. Detection rate is always pooled over true events.
    """
    if len(traces) != len(truths):
        raise MetricError(f"{len(traces)} traces but {len(truths)} annotation lists")
    total_true = sum(len(t) for t in truths)
    if total_true == 0:
        raise UndefinedMetricError("Detection rate is undefined without annotated seizure events")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)

    points: list[DetectionPoint] = []
    for threshold in thresholds:
        results = [
            match_events(
                binarize_events(trace, float(threshold), min_event_s),
                list(truth),
                trace.record_duration_s / 3600.0,
            )
            for trace, truth in zip(traces, truths, strict=True)
        ]
        total = results[0]
        for result in results[1:]:
            total = total + result
        fdh = total.fd_per_hour if pooled else float(np.mean([r.fd_per_hour for r in results]))
        points.append(DetectionPoint(float(threshold), fdh, total.detected_true_events / total_true))
    return points


def detection_rate_at(curve: Sequence[DetectionPoint], fd_per_hour: float) -> DetectionPoint | None:
    """The highest detection rate whose FD/h does not exceed ``fd_per_hour``."""
    admissible = [p for p in curve if p.fd_per_hour <= fd_per_hour + 1e-12]
    if not admissible:
        return None
    return max(admissible, key=lambda p: (p.detection_rate, -p.fd_per_hour, p.threshold))


# --- Cohort summaries ---


@dataclass(frozen=True)
class LooEntry:
    excluded_record_id: str
    auc: float | None
    reason: str | None = None


def leave_one_out(traces: Sequence[Any], labels: Sequence[np.ndarray]) -> list[LooEntry]:
    if len(traces) < 3:
        raise MetricError(f"Leave-one-out needs at least 3 records, got {len(traces)}")
    if len(traces) != len(labels):
        raise MetricError(f"{len(traces)} traces but {len(labels)} label arrays")
    entries: list[LooEntry] = []
    for i, trace in enumerate(traces):
        record_id = str(getattr(trace, "record_id", i))
        rest = [(t, y) for j, (t, y) in enumerate(zip(traces, labels, strict=True)) if j != i]
        try:
            entries.append(LooEntry(record_id, auc_concat(rest)))
        except UndefinedMetricError as e:
            logger.warning("AUC without %s is undefined: %s", record_id, e.message)
            entries.append(LooEntry(record_id, None, e.message))
    return entries


def auc_by_group(
    traces: Sequence[Any], labels: Sequence[np.ndarray], group_by_record: Mapping[str, int]
) -> dict[str, MetricValue]:
    """Concatenated AUC for each GA group present, plus ``overall``."""
    pairs: dict[str, list[tuple[Any, np.ndarray]]] = {}
    for trace, record_labels in zip(traces, labels, strict=True):
        key = f"group_{group_by_record[trace.record_id]}"
        pairs.setdefault(key, []).append((trace, record_labels))
    pairs["overall"] = list(zip(traces, labels, strict=True))

    result: dict[str, MetricValue] = {}
    for key in sorted(pairs):
        try:
            result[key] = MetricValue(auc_concat(pairs[key]))
        except UndefinedMetricError as e:
            result[key] = MetricValue(None, e.message)
    return result


@dataclass
class MetricReport:
    """Everything ``eval`` reports for one model on one set of records."""

    config_hash: str
    n_records: int
    n_windows: int
    auc: float
    threshold: float
    sensitivity: MetricValue
    specificity: MetricValue
    operating_point: DetectionPoint | None = None
    operating_fdh: float | None = None
    auc_by_group: dict[str, MetricValue] = field(default_factory=dict)
    leave_one_out: list[LooEntry] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "n_records": self.n_records,
            "n_windows": self.n_windows,
            "auc": self.auc,
            "threshold": self.threshold,
            "sensitivity": self.sensitivity.to_dict(),
            "specificity": self.specificity.to_dict(),
            "operating_fdh": self.operating_fdh,
            "operating_point": asdict(self.operating_point) if self.operating_point else None,
            "auc_by_group": {k: v.to_dict() for k, v in self.auc_by_group.items()},
            "leave_one_out": [asdict(entry) for entry in self.leave_one_out],
            **self.extra,
        }
