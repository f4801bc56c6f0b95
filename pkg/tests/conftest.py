"""Shared, seeded fixtures."""

import numpy as np
import pytest

from preterm_sda.core.dsp import WindowBatch
from preterm_sda.core.eeg_io import AnnotationSet, EegRecord
from preterm_sda.core.infer import ProbabilityTrace
from preterm_sda.core.net import TINY, NetworkParams, init_params
from preterm_sda.utils import dependencies
from preterm_sda.utils.config import SynthConfig, TrainConfig


@pytest.fixture(autouse=True)
def _clear_providers():
    yield
    dependencies.get_base_config.cache_clear()
    dependencies.get_executor.cache_clear()
    dependencies.get_command_executor.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_record():
    """Builds a record of sinusoids plus noise at the given rate."""

    def _make(
        duration_s: float = 60.0,
        fs_hz: float = 256.0,
        n_channels: int = 2,
        ga_weeks: float = 27.0,
        record_id: str = "rec",
        annotations: AnnotationSet | None = None,
        seed: int = 0,
    ) -> EegRecord:
        generator = np.random.default_rng(seed)
        t = np.arange(int(duration_s * fs_hz)) / fs_hz
        samples = 20 * np.sin(2 * np.pi * 2.0 * t)[None, :] + generator.normal(0, 5, (n_channels, t.size))
        return EegRecord(
            record_id=record_id,
            ga_weeks=ga_weeks,
            fs_hz=fs_hz,
            channel_names=tuple(f"ch{i}" for i in range(n_channels)),
            samples=samples,
            annotations=annotations or AnnotationSet(),
        )

    return _make


@pytest.fixture
def make_batch():
    """Window batch whose seizure windows carry a strong 2 Hz rhythm on channel 0."""

    def _make(
        record_id: str,
        labels,
        ga_weeks: float = 27.0,
        n_channels: int = 2,
        seed: int = 0,
        stride_s: float = 1.0,
    ) -> WindowBatch:
        labels = np.asarray(labels, dtype=np.int64)
        generator = np.random.default_rng(seed)
        t = np.arange(256) / 32.0
        windows = generator.normal(0, 10, (labels.size, n_channels, 256))
        windows[labels == 1, 0, :] += 120 * np.sin(2 * np.pi * 2.0 * t)
        return WindowBatch(
            windows=windows,
            labels=labels,
            start_times_s=np.arange(labels.size) * stride_s,
            sample_weights=np.ones(labels.size),
            record_id=record_id,
            ga_weeks=ga_weeks,
            stride_s=stride_s,
        )

    return _make


@pytest.fixture
def tiny_params() -> NetworkParams:
    """TINY parameters marked as having running statistics so infer mode works."""
    params = init_params(7, TINY)
    return NetworkParams(params.architecture, params.tensors, stats_batches=1)


@pytest.fixture
def make_trace():
    def _make(probs, record_id: str = "rec", stride_s: float = 1.0, duration_s: float | None = None) -> ProbabilityTrace:
        probs = np.asarray(probs, dtype=np.float64)
        starts = np.arange(probs.size) * stride_s
        return ProbabilityTrace(
            record_id=record_id,
            stride_s=stride_s,
            start_times_s=starts,
            probs=probs,
            record_duration_s=duration_s if duration_s is not None else float(starts[-1] + 8.0),
        )

    return _make


@pytest.fixture
def fast_train_config() -> TrainConfig:
    return TrainConfig(
        architecture="tiny",
        dtype="float64",
        max_epochs=2,
        patience_epochs=2,
        batch_size=16,
        seizure_oversample_ratio=0.0,
        edge_margin_s=0.0,
        val_records=1,
        ga_val_records=1,
        seed=3,
    )


@pytest.fixture
def small_synth_config() -> SynthConfig:
    return SynthConfig(
        n_infants=4,
        record_minutes=2.0,
        seizure_rate_per_hour=60.0,
        n_test_infants=1,
        n_val_infants=1,
        n_control_infants=1,
        seed=11,
    )
