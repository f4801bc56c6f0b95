"""Synthetic preterm EEG: discontinuous background with focal rhythmic delta seizures.

Every waveform parameter here is made up for pipeline testing; the only statistics
tied to clinical observation are the 10 s minimum seizure length, the proportion of
seizures shorter than one minute and the delta-band seizure rhythm. Nothing generated
here carries clinical meaning.
"""

import json
import logging
from collections.abc import Iterable
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
from scipy.signal import periodogram
from scipy.signal.windows import tukey

from preterm_sda.core.dsp import segment
from preterm_sda.core.eeg_io import (
    AnnotationSet,
    DatasetManifest,
    EegRecord,
    ManifestEntry,
    save_annotations,
    save_manifest,
    save_record,
)
from preterm_sda.core.infer import ProbabilityTrace
from preterm_sda.utils.config import SynthConfig
from preterm_sda.utils.constants import MIN_SEIZURE_S, RECORD_SUFFIX, TARGET_FS_HZ, WINDOW_S

logger = logging.getLogger(__name__)

MONTAGE_8 = ("F4-C4", "C4-O2", "F3-C3", "C3-O1", "T4-C4", "C4-Cz", "Cz-C3", "C3-T3")
IBI_NOISE_UV = 4.0
BURST_AMPLITUDE_UV = 45.0
BURST_BAND_HZ = (0.5, 8.0)
LONG_SEIZURE_MEAN_EXTRA_S = 60.0
SEIZURE_GAP_S = 5.0
SEIZURE_EDGE_MARGIN_S = 10.0
PLACEMENT_ATTEMPTS = 50


def channel_names(n_channels: int) -> tuple[str, ...]:
    if n_channels == len(MONTAGE_8):
        return MONTAGE_8
    return tuple(f"ch{i + 1}" for i in range(n_channels))


def mean_ibi_s(ga_weeks: float) -> float:
    """Inter-burst intervals shorten with maturation."""
    return max(2.0, 14.0 - 1.2 * (ga_weeks - 23.0))


def mean_burst_s(ga_weeks: float) -> float:
    return 2.5 + 0.15 * (ga_weeks - 23.0)


@dataclass
class SeizureMeta:
    onset_s: float
    offset_s: float
    channels: list[int]
    freq_hz: float


@dataclass
class SynthRecordMeta:
    """Generative parameters of one synthetic record, saved next to it as JSON."""

    record_id: str
    ga_weeks: float
    seed: int
    mean_ibi_s: float
    ibi_durations_s: list[float] = field(default_factory=list)
    burst_durations_s: list[float] = field(default_factory=list)
    burst_intervals_s: list[tuple[float, float]] = field(default_factory=list)
    seizures: list[SeizureMeta] = field(default_factory=list)
    dropped_seizures: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _band_limited(rng: np.random.Generator, n: int, fs_hz: float, band: tuple[float, float], n_tones: int = 4) -> np.ndarray:
    t = np.arange(n) / fs_hz
    freqs = rng.uniform(band[0], band[1], size=n_tones)
    phases = rng.uniform(0.0, 2 * np.pi, size=n_tones)
    gains = rng.uniform(0.5, 1.0, size=n_tones)
    wave = (gains[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    return wave / np.sqrt(np.sum(gains**2) / 2)


def generate_background(
    ga_weeks: float,
    duration_s: float,
    seed: int,
    fs_hz: float = 256.0,
    n_channels: int = 8,
) -> tuple[np.ndarray, SynthRecordMeta]:
    """Tracé discontinu: low-voltage noise interrupted by short widespread delta/theta bursts."""
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration_s * fs_hz))
    samples = IBI_NOISE_UV * rng.standard_normal((n_channels, n_samples))
    meta = SynthRecordMeta(record_id="", ga_weeks=ga_weeks, seed=seed, mean_ibi_s=mean_ibi_s(ga_weeks))

    ibi_mean = mean_ibi_s(ga_weeks)
    burst_mean = mean_burst_s(ga_weeks)
    t = 0.0
    while True:
        ibi = float(rng.gamma(4.0, ibi_mean / 4.0))
        t += ibi
        meta.ibi_durations_s.append(ibi)
        burst = float(np.clip(rng.gamma(4.0, burst_mean / 4.0), 0.5, 4 * burst_mean))
        if t + burst > duration_s:
            break
        start, stop = int(t * fs_hz), int((t + burst) * fs_hz)
        envelope = tukey(stop - start, alpha=0.5)
        common = _band_limited(rng, stop - start, fs_hz, BURST_BAND_HZ)
        gains = rng.uniform(0.6, 1.2, size=n_channels)
        local = 0.3 * rng.standard_normal((n_channels, stop - start))
        samples[:, start:stop] += BURST_AMPLITUDE_UV * envelope * (gains[:, None] * common + local)
        meta.burst_durations_s.append(burst)
        meta.burst_intervals_s.append((t, t + burst))
        t += burst
    return samples, meta


def sample_seizure_durations(n: int, short_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Short events are uniform on [10, 60) s, the others 60 s plus an exponential tail."""
    short = rng.random(n) < short_fraction
    durations = np.where(
        short,
        rng.uniform(MIN_SEIZURE_S, 60.0, size=n),
        60.0 + rng.exponential(LONG_SEIZURE_MEAN_EXTRA_S, size=n),
    )
    return durations


def seizure_waveform(
    n: int, fs_hz: float, freq_hz: float, amplitude_uv: float, rng: np.random.Generator
) -> np.ndarray:
    """Rhythmic discharge: fundamental plus two harmonics under a tapered envelope."""
    t = np.arange(n) / fs_hz
    drift = 1.0 + rng.uniform(-0.1, 0.1) * t / max(t[-1], 1.0)
    phase = 2 * np.pi * freq_hz * np.cumsum(drift) / fs_hz
    wave = np.zeros(n)
    for harmonic, gain in ((1, 1.0), (2, 0.5), (3, 0.25)):
        if harmonic * freq_hz < fs_hz / 2:
            wave += gain * np.sin(harmonic * phase + rng.uniform(0, 2 * np.pi))
    return amplitude_uv * tukey(n, alpha=0.2) * wave


def _place_events(
    durations: Iterable[float], record_s: float, rng: np.random.Generator
) -> tuple[list[tuple[float, float]], int]:
    placed: list[tuple[float, float]] = []
    dropped = 0
    for duration in durations:
        latest = record_s - SEIZURE_EDGE_MARGIN_S - duration
        if latest <= SEIZURE_EDGE_MARGIN_S:
            dropped += 1
            continue
        for _ in range(PLACEMENT_ATTEMPTS):
            onset = float(rng.uniform(SEIZURE_EDGE_MARGIN_S, latest))
            offset = onset + float(duration)
            if all(offset + SEIZURE_GAP_S <= a or onset >= b + SEIZURE_GAP_S for a, b in placed):
                placed.append((onset, offset))
                break
        else:
            dropped += 1
    return sorted(placed), dropped


def _inject(
    record: EegRecord, config: SynthConfig, seed: int, min_events: int = 0
) -> tuple[EegRecord, AnnotationSet, list[SeizureMeta], int]:
    rng = np.random.default_rng(seed)
    n_events = int(rng.poisson(config.seizure_rate_per_hour * record.duration_s / 3600.0))
    n_events = max(n_events, min_events)
    durations = sample_seizure_durations(n_events, config.short_seizure_fraction, rng)
    # No event may outlast the usable part of the record.
    longest = record.duration_s - 2 * SEIZURE_EDGE_MARGIN_S - 1.0
    if longest >= MIN_SEIZURE_S:
        durations = np.minimum(durations, longest)
    events, dropped = _place_events(durations, record.duration_s, rng)
    if dropped:
        logger.warning(
            "%s: %d of %d seizures did not fit without overlap and were dropped",
            record.record_id,
            dropped,
            n_events,
        )

    samples = np.array(record.samples)
    seizures: list[SeizureMeta] = []
    for onset, offset in events:
        start, stop = int(round(onset * record.fs_hz)), int(round(offset * record.fs_hz))
        channels = sorted(rng.choice(record.n_channels, size=config.focal_channel_count, replace=False).tolist())
        freq = float(rng.uniform(*config.seizure_freq_band_hz))
        wave = seizure_waveform(stop - start, record.fs_hz, freq, config.seizure_amplitude_uv, rng)
        for channel in channels:
            samples[channel, start:stop] += rng.uniform(0.8, 1.2) * wave
        seizures.append(SeizureMeta(onset, offset, channels, freq))
    annotations = AnnotationSet(tuple(events))
    return record.replace(samples=samples, annotations=annotations), annotations, seizures, dropped


def inject_seizures(record: EegRecord, config: SynthConfig, seed: int) -> tuple[EegRecord, AnnotationSet]:
    """Adds focal rhythmic seizures at ``config.seizure_rate_per_hour``; returns the record and its events."""
    injected, annotations, _, _ = _inject(record, config, seed)
    return injected, annotations


def generate_record(
    record_id: str, ga_weeks: float, config: SynthConfig, seed: int, with_seizures: bool = True
) -> tuple[EegRecord, SynthRecordMeta]:
    background_seed, seizure_seed = (
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(2)
    )
    duration_s = config.record_minutes * 60.0
    samples, meta = generate_background(ga_weeks, duration_s, background_seed, config.fs_hz, config.n_channels)
    meta.record_id = record_id
    meta.seed = seed
    record = EegRecord(
        record_id=record_id,
        ga_weeks=ga_weeks,
        fs_hz=config.fs_hz,
        channel_names=channel_names(config.n_channels),
        samples=samples,
    )
    if with_seizures and config.seizure_rate_per_hour > 0:
        record, _, meta.seizures, meta.dropped_seizures = _inject(record, config, seizure_seed, min_events=1)
    return record, meta


@dataclass(frozen=True)
class _InfantPlan:
    index: int
    record_id: str
    ga_weeks: float
    split: str
    seed: int
    control: bool


def plan_cohort(config: SynthConfig) -> list[_InfantPlan]:
    """GA uniform over the configured range; test infants first, then validation, then training."""
    rng = np.random.default_rng(config.seed)
    low, high = config.ga_range_weeks
    ages = np.round(rng.uniform(low, high, size=config.n_infants), 1)
    seeds = [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(config.seed).spawn(config.n_infants)]
    plans = []
    for i in range(config.n_infants):
        if i < config.n_test_infants:
            split = "test"
        elif i < config.n_test_infants + config.n_val_infants:
            split = "val"
        else:
            split = "train"
        plans.append(
            _InfantPlan(
                index=i,
                record_id=f"infant{i + 1:02d}",
                ga_weeks=float(ages[i]),
                split=split,
                seed=seeds[i],
                control=i < config.n_control_infants,
            )
        )
    return plans


def _write_infant(plan: _InfantPlan, config: SynthConfig, output_dir: Path) -> ManifestEntry:
    record, meta = generate_record(plan.record_id, plan.ga_weeks, config, plan.seed, with_seizures=not plan.control)
    record_rel = f"records/{plan.record_id}{RECORD_SUFFIX}"
    annotations_rel = f"annotations/{plan.record_id}.csv"
    save_record(record, output_dir / record_rel)
    save_annotations(record.annotations, output_dir / annotations_rel)
    (output_dir / "meta" / f"{plan.record_id}.json").write_text(
        json.dumps(meta.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return ManifestEntry(record=record_rel, annotations=annotations_rel, ga_weeks=record.ga_weeks, split=plan.split)


def generate_cohort(
    config: SynthConfig,
    output_dir: Path | str,
    executor: Executor | None = None,
) -> DatasetManifest:
    """Writes records, annotations, metadata sidecars and ``manifest.json`` under ``output_dir``."""
    output_dir = Path(output_dir)
    for sub in ("records", "annotations", "meta"):
        (output_dir / sub).mkdir(parents=True, exist_ok=True)
    plans = plan_cohort(config)
    write = partial(_write_infant, config=config, output_dir=output_dir)
    entries = list(executor.map(write, plans)) if executor is not None else [write(p) for p in plans]
    manifest = DatasetManifest(entries=tuple(entries), base_dir=output_dir)
    save_manifest(manifest, output_dir / "manifest.json")
    logger.info("Generated %d synthetic infants in %s", len(entries), output_dir)
    return manifest


def band_power_trace(
    record_32hz: EegRecord,
    band_hz: tuple[float, float] = (0.5, 3.0),
    stride_s: float = 1.0,
    reference_quantile: float = 0.95,
) -> ProbabilityTrace:
    """Energy baseline: maximum in-band channel power per window, squashed into [0, 1).

    Power equal to the record's ``reference_quantile`` maps to 0.5.
    """
    batch = segment(record_32hz, WINDOW_S, stride_s, edge_margin_s=0.0)
    freqs, psd = periodogram(batch.windows, fs=TARGET_FS_HZ, axis=-1)
    in_band = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
    power = psd[..., in_band].sum(axis=-1).max(axis=1)
    reference = float(np.quantile(power, reference_quantile))
    ratio = power / reference if reference > 0 else power
    return ProbabilityTrace(
        record_id=record_32hz.record_id,
        stride_s=batch.stride_s,
        start_times_s=batch.start_times_s,
        probs=ratio / (1.0 + ratio),
        stage="raw",
        record_duration_s=record_32hz.duration_s,
    )
