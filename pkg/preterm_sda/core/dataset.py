"""Turns manifest entries into labelled window batches, optionally through an on-disk cache."""

import hashlib
import logging
from collections.abc import Sequence
from concurrent.futures import Executor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

from preterm_sda.core.dsp import WindowBatch, load_window_batch, preprocess, save_window_batch
from preterm_sda.core.eeg_io import (
    AnnotationSet,
    DatasetManifest,
    ManifestEntry,
    Split,
    load_annotations,
    load_entry,
    read_record_header,
)
from preterm_sda.core.errors import ManifestError
from preterm_sda.utils.constants import BATCH_SUFFIX

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreparedRecord:
    record_id: str
    ga_weeks: float
    split: str
    duration_s: float
    annotations: AnnotationSet
    batch: WindowBatch


def content_fingerprint(manifest: DatasetManifest, entry: ManifestEntry) -> str:
    """Digest of the record and annotation file bytes; changes whenever either file does."""
    digest = hashlib.sha256()
    for relative in (entry.record, entry.annotations):
        path = manifest.resolve(relative)
        if not path.exists():
            raise ManifestError(f"File does not exist: {path}")
        with open(path, "rb") as f:
            digest.update(hashlib.file_digest(f, "sha256").digest())
    return digest.hexdigest()[:16]


def _cache_path(
    cache_dir: Path,
    manifest: DatasetManifest,
    entry: ManifestEntry,
    stride_s: float,
    label_threshold: float,
    edge_margin_s: float,
) -> Path:
    stem = Path(entry.record).stem
    fingerprint = content_fingerprint(manifest, entry)
    return cache_dir / f"{stem}.{fingerprint}.s{stride_s:g}.t{label_threshold:g}.e{edge_margin_s:g}{BATCH_SUFFIX}"


def prepare_entry(
    manifest: DatasetManifest,
    entry: ManifestEntry,
    stride_s: float = 1.0,
    label_threshold: float = 0.5,
    edge_margin_s: float = 2.0,
    cache_dir: Path | None = None,
) -> PreparedRecord:
    cached = (
        _cache_path(cache_dir, manifest, entry, stride_s, label_threshold, edge_margin_s) if cache_dir else None
    )
    if cached is not None and cached.exists():
        batch = load_window_batch(cached)
        annotations = load_annotations(manifest.resolve(entry.annotations))
        header = read_record_header(manifest.resolve(entry.record))
        duration_s = header["n_samples"] / float(header["fs_hz"])
        logger.debug("Loaded cached windows for %s", batch.record_id)
        return PreparedRecord(batch.record_id, batch.ga_weeks, entry.split, duration_s, annotations, batch)

    record = load_entry(manifest, entry)
    record_32, batch = preprocess(record, stride_s, label_threshold, edge_margin_s)
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        save_window_batch(batch, cached)
    return PreparedRecord(
        record_id=record.record_id,
        ga_weeks=record.ga_weeks,
        split=entry.split,
        duration_s=record_32.duration_s,
        annotations=record.annotations,
        batch=batch,
    )


def prepare_split(
    manifest: DatasetManifest,
    splits: Sequence[Split],
    stride_s: float = 1.0,
    label_threshold: float = 0.5,
    edge_margin_s: float = 2.0,
    executor: Executor | None = None,
    cache_dir: Path | None = None,
) -> list[PreparedRecord]:
    """Preprocesses every entry of the given splits, in manifest order."""
    entries = [entry for entry in manifest.entries if entry.split in splits]
    if not entries:
        raise ManifestError(f"Manifest has no records in split(s) {list(splits)}")
    prepare = partial(
        prepare_entry,
        manifest,
        stride_s=stride_s,
        label_threshold=label_threshold,
        edge_margin_s=edge_margin_s,
        cache_dir=cache_dir,
    )
    prepared = list(executor.map(prepare, entries)) if executor is not None else [prepare(e) for e in entries]
    logger.info(
        "Prepared %d records (%d windows) from split(s) %s",
        len(prepared),
        sum(len(p.batch) for p in prepared),
        ", ".join(splits),
    )
    return prepared
