"""Preprocessing: anti-alias lowpass, decimation to 32 Hz, highpass, windowing and weak labels."""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import signal as sps

from preterm_sda.core.eeg_io import (
    AnnotationSet,
    EegRecord,
    decode_floats,
    read_framed,
    write_framed,
)
from preterm_sda.core.errors import FilterDesignError, RecordFormatError, SignalTooShortError
from preterm_sda.utils.constants import (
    ANTI_ALIAS_CUTOFF_HZ,
    ANTI_ALIAS_TAPS_PER_FACTOR,
    HIGH_PASS_CUTOFF_HZ,
    HIGH_PASS_TAPS,
    TARGET_FS_HZ,
    WINDOW_S,
    WINDOW_SAMPLES,
)

logger = logging.getLogger(__name__)

FilterKind = Literal["lowpass", "highpass"]


@dataclass(frozen=True, eq=False)
class FirFilter:
    """A linear-phase FIR filter designed for a given sampling rate."""

    taps: np.ndarray
    kind: FilterKind
    cutoff_hz: float
    design_fs_hz: float

    @property
    def n_taps(self) -> int:
        return int(self.taps.size)

    @property
    def group_delay(self) -> int:
        return (self.n_taps - 1) // 2

    def response(self, freqs_hz: np.ndarray | float) -> np.ndarray:
        """Magnitude of the frequency response at the given frequencies."""
        freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        _, h = sps.freqz(self.taps, worN=freqs, fs=self.design_fs_hz)
        return np.abs(h)


def design_fir(kind: FilterKind, cutoff_hz: float, fs_hz: float, n_taps: int) -> FirFilter:
    """Hamming windowed-sinc design; the highpass is the spectral inversion of the lowpass."""
    if not 0 < cutoff_hz < fs_hz / 2:
        raise FilterDesignError(f"cutoff {cutoff_hz} Hz outside (0, {fs_hz / 2}) Hz")
    if n_taps < 3 or n_taps % 2 == 0:
        raise FilterDesignError(f"n_taps must be odd and >= 3, got {n_taps}")
    if kind not in ("lowpass", "highpass"):
        raise FilterDesignError(f"Unknown filter kind: {kind}")

    lowpass = sps.firwin(n_taps, cutoff_hz, window="hamming", pass_zero=True, fs=fs_hz)
    lowpass = lowpass / lowpass.sum()
    if kind == "lowpass":
        taps = lowpass
    else:
        taps = -lowpass
        taps[(n_taps - 1) // 2] += 1.0
    taps.setflags(write=False)
    return FirFilter(taps=taps, kind=kind, cutoff_hz=float(cutoff_hz), design_fs_hz=float(fs_hz))


@lru_cache(maxsize=32)
def _cached_fir(kind: FilterKind, cutoff_hz: float, fs_hz: float, n_taps: int) -> FirFilter:
    return design_fir(kind, cutoff_hz, fs_hz, n_taps)


def filter_signal(fir: FirFilter, x: np.ndarray) -> np.ndarray:
    """Zero-phase FIR filtering along the last axis.

    The signal is filtered forward and shifted back by the group delay; samples beyond
    either end are treated as zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] <= fir.n_taps:
        raise SignalTooShortError(
            f"Signal of {x.shape[-1]} samples is too short for a {fir.n_taps}-tap filter"
        )
    delay = fir.group_delay
    pad = [(0, 0)] * (x.ndim - 1) + [(0, delay)]
    padded = np.pad(x, pad)
    return sps.lfilter(fir.taps, [1.0], padded, axis=-1)[..., delay:]


def anti_alias_filter(fs_hz: float) -> FirFilter:
    factor = int(round(fs_hz / TARGET_FS_HZ))
    return _cached_fir("lowpass", ANTI_ALIAS_CUTOFF_HZ, fs_hz, ANTI_ALIAS_TAPS_PER_FACTOR * factor + 1)


def high_pass_filter() -> FirFilter:
    return _cached_fir("highpass", HIGH_PASS_CUTOFF_HZ, TARGET_FS_HZ, HIGH_PASS_TAPS)


def resample_to_32hz(record: EegRecord) -> EegRecord:
    """Lowpass at 12.8 Hz, keep every (fs/32)-th sample, then highpass at 0.5 Hz."""
    ratio = record.fs_hz / TARGET_FS_HZ
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise FilterDesignError(
            f"Cannot decimate {record.fs_hz} Hz to {TARGET_FS_HZ:.0f} Hz: non-integer factor {ratio}"
        )

    samples = record.samples
    if factor > 1:
        samples = filter_signal(anti_alias_filter(record.fs_hz), samples)[:, ::factor]
    samples = filter_signal(high_pass_filter(), samples)
    logger.debug("Resampled %s from %s Hz by factor %d", record.record_id, record.fs_hz, factor)
    return record.replace(fs_hz=TARGET_FS_HZ, samples=samples)


@dataclass(frozen=True, eq=False)
class WindowBatch:
    """Fixed-length multichannel windows of one record, with weak labels and weights."""

    windows: np.ndarray
    labels: np.ndarray
    start_times_s: np.ndarray
    sample_weights: np.ndarray
    record_id: str
    ga_weeks: float
    stride_s: float
    edge_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self) -> None:
        n = self.windows.shape[0]
        if self.edge_flags.size == 0 and n:
            object.__setattr__(self, "edge_flags", np.zeros(n, dtype=bool))
        for name in ("labels", "start_times_s", "sample_weights", "edge_flags"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"WindowBatch.{name} must have shape ({n},)")

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.windows.shape[1])

    def subset(self, mask: np.ndarray) -> "WindowBatch":
        return replace(
            self,
            windows=self.windows[mask],
            labels=self.labels[mask],
            start_times_s=self.start_times_s[mask],
            sample_weights=self.sample_weights[mask],
            edge_flags=self.edge_flags[mask],
        )

    def without_edges(self) -> "WindowBatch":
        return self.subset(~self.edge_flags)

    def with_weights(self, weights: np.ndarray | float) -> "WindowBatch":
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), (len(self),)).copy()
        return replace(self, sample_weights=weights)

    @property
    def has_both_classes(self) -> bool:
        return bool(self.labels.any() and not self.labels.all())


def segment(
    record: EegRecord,
    window_s: float = WINDOW_S,
    stride_s: float = 1.0,
    edge_margin_s: float = 2.0,
) -> WindowBatch:
    """Cuts a 32 Hz record into 8 s windows at the given stride; the partial tail is dropped."""
    if abs(record.fs_hz - TARGET_FS_HZ) > 1e-9:
        raise FilterDesignError(f"segment expects a {TARGET_FS_HZ:.0f} Hz record, got {record.fs_hz}")
    if abs(window_s - WINDOW_S) > 1e-9:
        raise ValueError(f"Window length is fixed at {WINDOW_S:.0f} s")
    stride = int(round(stride_s * TARGET_FS_HZ))
    if not 1 <= stride_s <= WINDOW_S or abs(stride - stride_s * TARGET_FS_HZ) > 1e-9:
        raise ValueError(f"stride_s must be in [1, 8] s and a whole number of samples, got {stride_s}")
    if record.n_samples < WINDOW_SAMPLES:
        raise SignalTooShortError(
            f"Record {record.record_id} lasts {record.duration_s:.2f} s, shorter than one {window_s:.0f} s window"
        )

    n_windows = (record.n_samples - WINDOW_SAMPLES) // stride + 1
    starts = np.arange(n_windows) * stride
    index = starts[:, None] + np.arange(WINDOW_SAMPLES)[None, :]
    windows = np.transpose(record.samples[:, index], (1, 0, 2))
    start_times = starts / TARGET_FS_HZ
    edge_flags = (start_times < edge_margin_s) | (
        start_times + window_s > record.duration_s - edge_margin_s
    )
    return WindowBatch(
        windows=np.ascontiguousarray(windows),
        labels=np.zeros(n_windows, dtype=np.int64),
        start_times_s=start_times,
        sample_weights=np.ones(n_windows, dtype=np.float64),
        record_id=record.record_id,
        ga_weeks=record.ga_weeks,
        stride_s=float(stride_s),
        edge_flags=edge_flags,
    )


def weak_labels(
    start_times_s: np.ndarray,
    annotations: AnnotationSet,
    window_s: float = WINDOW_S,
    threshold: float = 0.5,
) -> np.ndarray:
    """1 where at least ``threshold`` of the window span lies inside annotated seizure time."""
    starts = np.asarray(start_times_s, dtype=np.float64)
    overlap = np.zeros_like(starts)
    for onset, offset in annotations:
        overlap += np.clip(np.minimum(starts + window_s, offset) - np.maximum(starts, onset), 0.0, None)
    return (overlap >= threshold * window_s - 1e-9).astype(np.int64)


def assign_weak_labels(
    batch: WindowBatch, annotations: AnnotationSet, threshold: float = 0.5
) -> WindowBatch:
    return replace(batch, labels=weak_labels(batch.start_times_s, annotations, WINDOW_S, threshold))


def preprocess(
    record: EegRecord,
    stride_s: float = 1.0,
    label_threshold: float = 0.5,
    edge_margin_s: float = 2.0,
) -> tuple[EegRecord, WindowBatch]:
    """Full chain for one record: resample, segment, label."""
    record_32 = resample_to_32hz(record)
    batch = segment(record_32, WINDOW_S, stride_s, edge_margin_s)
    return record_32, assign_weak_labels(batch, record.annotations, label_threshold)


# --- Window-batch cache ---


def save_window_batch(batch: WindowBatch, path: Path | str) -> None:
    header = {
        "record_id": batch.record_id,
        "ga_weeks": batch.ga_weeks,
        "stride_s": batch.stride_s,
        "shape": list(batch.windows.shape),
        "start_times_s": batch.start_times_s.tolist(),
        "labels": batch.labels.tolist(),
        "sample_weights": batch.sample_weights.tolist(),
        "edge_flags": batch.edge_flags.astype(int).tolist(),
    }
    write_framed(Path(path), header, [batch.windows])


def load_window_batch(path: Path | str) -> WindowBatch:
    header, payload = read_framed(Path(path))
    try:
        shape = tuple(int(d) for d in header["shape"])
        windows = decode_floats(payload, int(np.prod(shape)), path).reshape(shape)
        return WindowBatch(
            windows=windows,
            labels=np.asarray(header["labels"], dtype=np.int64),
            start_times_s=np.asarray(header["start_times_s"], dtype=np.float64),
            sample_weights=np.asarray(header["sample_weights"], dtype=np.float64),
            record_id=str(header["record_id"]),
            ga_weeks=float(header["ga_weeks"]),
            stride_s=float(header["stride_s"]),
            edge_flags=np.asarray(header["edge_flags"], dtype=bool),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise RecordFormatError(f"Malformed window batch {path}: {e}") from e
