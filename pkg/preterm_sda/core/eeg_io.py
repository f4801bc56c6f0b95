"""On-disk formats for EEG records, seizure annotations and dataset manifests.

A record file (``.eegr``) is a single JSON header line followed by the samples as
little-endian float32, channel-major. Annotations are a two-column CSV
(``onset_s,offset_s``). A manifest is a JSON array of
``{record, annotations, ga_weeks, split}`` objects with paths relative to the manifest.
"""

import csv
import json
import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, TypeAdapter, ValidationError

from preterm_sda.core.errors import (
    AnnotationError,
    ManifestError,
    RecordFormatError,
    RecordValidationError,
)
from preterm_sda.utils.constants import GA_MAX_WEEKS, GA_MIN_WEEKS, MIN_SEIZURE_S

logger = logging.getLogger(__name__)

SAMPLE_DTYPE = np.dtype("<f4")
RECORD_HEADER_KEYS = ("record_id", "ga_weeks", "fs_hz", "channel_names", "n_samples")
ANNOTATION_COLUMNS = ["onset_s", "offset_s"]

OverlapPolicy = Literal["merge", "error"]
Split = Literal["train", "val", "test"]


# --- Framed binary files (JSON header line + float32 payload) ---


def write_framed(
    path: Path, header: dict[str, Any], arrays: Iterable[np.ndarray], header_text: str | None = None
) -> None:
    """Writes a JSON header line followed by the arrays as little-endian float32.

    ``header_text``, when given, is written verbatim in place of the compact dump of ``header``.
    """
    if header_text is None:
        header_text = json.dumps(header, separators=(",", ":"), ensure_ascii=False)
    header_line = header_text + "\n"
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(header_line.encode("utf-8"))
            for array in arrays:
                f.write(np.ascontiguousarray(array, dtype=SAMPLE_DTYPE).tobytes())
    except OSError as e:
        raise OSError(f"Error writing to file {path}: {e}") from e


def read_framed(path: Path) -> tuple[dict[str, Any], bytes]:
    """Reads a framed file and returns its parsed header and the raw payload bytes."""
    header, _, payload = read_framed_text(path)
    return header, payload


def read_framed_text(path: Path) -> tuple[dict[str, Any], str, bytes]:
    """Like ``read_framed``, also returning the header line exactly as stored."""
    path = Path(path)
    if not path.exists():
        raise RecordFormatError(f"File does not exist: {path}")
    content = path.read_bytes()
    newline = content.find(b"\n")
    if newline < 0:
        raise RecordFormatError(f"Malformed header in {path}: no header line")
    try:
        header_text = content[:newline].decode("utf-8")
        header = json.loads(header_text)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RecordFormatError(f"Malformed header in {path}: {e}") from e
    if not isinstance(header, dict):
        raise RecordFormatError(f"Malformed header in {path}: expected a JSON object")
    return header, header_text, content[newline + 1 :]


def decode_floats(payload: bytes, count: int, source: Path | str) -> np.ndarray:
    """Decodes ``count`` float32 values from a payload into a float64 array."""
    expected = count * SAMPLE_DTYPE.itemsize
    if len(payload) != expected:
        raise RecordFormatError(
            f"Sample count mismatch in {source}: expected {expected} bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=SAMPLE_DTYPE).astype(np.float64)


# --- Annotations ---


@dataclass(frozen=True)
class AnnotationSet:
    """Sorted, disjoint seizure events in seconds from record start."""

    events: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        events = tuple((float(on), float(off)) for on, off in self.events)
        object.__setattr__(self, "events", events)
        previous_offset = -math.inf
        for onset, offset in events:
            if onset < 0 or offset <= onset:
                raise AnnotationError(f"Invalid event ({onset}, {offset}): offset must follow onset")
            if offset - onset < MIN_SEIZURE_S:
                raise AnnotationError(
                    f"Event ({onset}, {offset}) lasts {offset - onset:.3f} s, "
                    f"shorter than the {MIN_SEIZURE_S:.0f} s minimum"
                )
            if onset <= previous_offset:
                raise AnnotationError("Events must be sorted by onset and disjoint")
            previous_offset = offset

    @classmethod
    def from_events(
        cls,
        events: Iterable[tuple[float, float]],
        overlap_policy: OverlapPolicy = "merge",
        min_duration_s: float = MIN_SEIZURE_S,
    ) -> "AnnotationSet":
        """Builds a validated set from raw events: sorts, then merges or rejects overlaps."""
        raw = sorted((float(on), float(off)) for on, off in events)
        for onset, offset in raw:
            if offset <= onset:
                raise AnnotationError(f"Invalid event ({onset}, {offset}): offset must follow onset")
            if offset - onset < min_duration_s:
                raise AnnotationError(
                    f"Event ({onset}, {offset}) lasts {offset - onset:.3f} s, "
                    f"shorter than the {min_duration_s:.0f} s minimum"
                )

        merged: list[list[float]] = []
        for onset, offset in raw:
            if merged and onset <= merged[-1][1]:
                if overlap_policy == "error":
                    raise AnnotationError(
                        f"Event ({onset}, {offset}) overlaps ({merged[-1][0]}, {merged[-1][1]})"
                    )
                logger.warning(
                    "Merging overlapping events (%s, %s) and (%s, %s)",
                    merged[-1][0],
                    merged[-1][1],
                    onset,
                    offset,
                )
                merged[-1][1] = max(merged[-1][1], offset)
            else:
                merged.append([onset, offset])
        return cls(tuple((on, off) for on, off in merged))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(self.events)

    @property
    def total_duration_s(self) -> float:
        return sum(off - on for on, off in self.events)

    @property
    def last_offset_s(self) -> float:
        return self.events[-1][1] if self.events else 0.0

    def overlap_s(self, start_s: float, end_s: float) -> float:
        """Seconds of annotated seizure time inside ``[start_s, end_s)``."""
        return sum(max(0.0, min(end_s, off) - max(start_s, on)) for on, off in self.events)


def load_annotations(
    path: Path | str,
    overlap_policy: OverlapPolicy = "merge",
    min_duration_s: float = MIN_SEIZURE_S,
) -> AnnotationSet:
    """Loads an annotation CSV into a sorted, merged and validated AnnotationSet."""
    path = Path(path)
    if not path.exists():
        raise AnnotationError(f"File does not exist: {path}")
    events: list[tuple[float, float]] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ANNOTATION_COLUMNS:
            raise AnnotationError(f"Annotation file {path} must start with 'onset_s,offset_s'")
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise AnnotationError(f"{path}:{row_number}: expected 2 columns, found {len(row)}")
            try:
                events.append((float(row[0]), float(row[1])))
            except ValueError as e:
                raise AnnotationError(f"{path}:{row_number}: {e}") from e
    return AnnotationSet.from_events(events, overlap_policy, min_duration_s)


def save_annotations(annotations: AnnotationSet, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for onset, offset in annotations:
            writer.writerow([repr(onset), repr(offset)])


# --- Records ---


@dataclass(frozen=True, eq=False)
class EegRecord:
    """A multichannel EEG recording with its corrected GA and weak seizure labels."""

    record_id: str
    ga_weeks: float
    fs_hz: float
    channel_names: tuple[str, ...]
    samples: np.ndarray
    annotations: AnnotationSet = field(default_factory=AnnotationSet)
    # Header line the record was loaded from; dropped by replace().
    header_text: str | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", tuple(str(c) for c in self.channel_names))
        object.__setattr__(self, "ga_weeks", float(self.ga_weeks))
        object.__setattr__(self, "fs_hz", float(self.fs_hz))
        self._validate()

    def _validate(self) -> None:
        if not self.record_id:
            raise RecordValidationError("record_id must be a non-empty string")
        if self.samples.ndim != 2:
            raise RecordValidationError(f"samples must be N x T, got shape {self.samples.shape}")
        n_channels, n_samples = self.samples.shape
        if n_channels < 1 or not self.channel_names:
            raise RecordValidationError("A record needs at least one channel")
        if n_samples < 1:
            raise RecordValidationError("A record needs at least one sample")
        if len(self.channel_names) != n_channels:
            raise RecordValidationError(
                f"{len(self.channel_names)} channel names for {n_channels} channels"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise RecordValidationError("Channel names must be unique")
        if not (self.fs_hz > 0 and math.isfinite(self.fs_hz)):
            raise RecordValidationError(f"fs_hz must be positive, got {self.fs_hz}")
        if not (GA_MIN_WEEKS <= self.ga_weeks <= GA_MAX_WEEKS):
            raise RecordValidationError(
                f"ga_weeks {self.ga_weeks} outside [{GA_MIN_WEEKS:.0f}, {GA_MAX_WEEKS:.0f}]"
            )
        if not np.all(np.isfinite(self.samples)):
            raise RecordValidationError(f"Record {self.record_id} contains non-finite samples")
        if self.annotations.last_offset_s > self.duration_s + 1e-9:
            raise RecordValidationError(
                f"Annotation ends at {self.annotations.last_offset_s} s, "
                f"after the record end ({self.duration_s} s)"
            )

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    def replace(self, **changes: Any) -> "EegRecord":
        values = {
            "record_id": self.record_id,
            "ga_weeks": self.ga_weeks,
            "fs_hz": self.fs_hz,
            "channel_names": self.channel_names,
            "samples": self.samples,
            "annotations": self.annotations,
        }
        values.update(changes)
        return EegRecord(**values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EegRecord):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.ga_weeks == other.ga_weeks
            and self.fs_hz == other.fs_hz
            and self.channel_names == other.channel_names
            and self.annotations == other.annotations
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None  # type: ignore[assignment]


def _record_header(record: EegRecord) -> dict[str, Any]:
    return {
        "record_id": record.record_id,
        "ga_weeks": record.ga_weeks,
        "fs_hz": record.fs_hz,
        "channel_names": list(record.channel_names),
        "n_samples": record.n_samples,
    }


def read_record_header(path: Path | str) -> dict[str, Any]:
    """Parses and checks only the header line of a record file."""
    header, _ = read_framed(Path(path))
    return _check_record_header(header, path)


def _check_record_header(header: dict[str, Any], path: Path | str) -> dict[str, Any]:
    missing = [key for key in RECORD_HEADER_KEYS if key not in header]
    if missing:
        raise RecordFormatError(f"Malformed header in {path}: missing {', '.join(missing)}")
    if not isinstance(header["channel_names"], list):
        raise RecordFormatError(f"Malformed header in {path}: channel_names must be a list")
    if not isinstance(header["n_samples"], int) or header["n_samples"] < 0:
        raise RecordFormatError(f"Malformed header in {path}: n_samples must be an integer")
    return header


def load_record(path: Path | str, annotations: AnnotationSet | None = None) -> EegRecord:
    """Loads and validates a record file; annotations come from a separate CSV."""
    path = Path(path)
    header, header_text, payload = read_framed_text(path)
    _check_record_header(header, path)
    n_channels = len(header["channel_names"])
    flat = decode_floats(payload, n_channels * header["n_samples"], path)
    if not np.all(np.isfinite(flat)):
        raise RecordValidationError(f"Record {path} contains non-finite samples")
    return EegRecord(
        record_id=header["record_id"],
        ga_weeks=header["ga_weeks"],
        fs_hz=header["fs_hz"],
        channel_names=tuple(header["channel_names"]),
        samples=flat.reshape(n_channels, header["n_samples"]),
        annotations=annotations if annotations is not None else AnnotationSet(),
        header_text=header_text,
    )


def _stored_header_text(record: EegRecord) -> str | None:
    """The loaded header line, if it still describes the record exactly."""
    if record.header_text is None:
        return None
    try:
        stored = json.loads(record.header_text)
    except json.JSONDecodeError:
        return None
    if isinstance(stored, dict) and all(stored.get(k) == v for k, v in _record_header(record).items()):
        return record.header_text
    return None


def save_record(record: EegRecord, path: Path | str) -> None:
    """Writes a record file readable by ``load_record``; annotations are not included.

    A record loaded from disk keeps its original header line, so loading and saving an
    unchanged record reproduces the file byte for byte. Other records get a compact header.
    """
    if not isinstance(record, EegRecord):
        raise RecordValidationError("save_record expects an EegRecord")
    write_framed(Path(path), _record_header(record), [record.samples], _stored_header_text(record))


# --- Manifests ---


class ManifestEntry(BaseModel):
    """One record of a dataset manifest; paths are relative to the manifest file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    record: str
    annotations: str
    ga_weeks: float
    split: Split


_ENTRIES_ADAPTER = TypeAdapter(list[ManifestEntry])


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: Path = Path(".")

    def resolve(self, relative: str) -> Path:
        candidate = Path(relative)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    def by_split(self, split: Split) -> list[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == split]

    def splits(self) -> set[str]:
        return {entry.split for entry in self.entries}


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"File does not exist: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        entries = _ENTRIES_ADAPTER.validate_python(raw)
    except json.JSONDecodeError as e:
        raise ManifestError(f"Invalid JSON in file {path}: {e}") from e
    except ValidationError as e:
        raise ManifestError(f"Invalid manifest {path}: {e}") from e
    return DatasetManifest(entries=tuple(entries), base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    data = [entry.model_dump() for entry in manifest.entries]
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def load_entry(manifest: DatasetManifest, entry: ManifestEntry) -> EegRecord:
    """Loads a manifest entry's record together with its annotations."""
    annotations = load_annotations(manifest.resolve(entry.annotations))
    return load_record(manifest.resolve(entry.record), annotations)


@dataclass(frozen=True)
class ManifestFailure:
    entry_index: int | None
    record: str | None
    reason: str


@dataclass
class ManifestReport:
    checked: int = 0
    failures: list[ManifestFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict[str, Any]:
        return {
            "checked": self.checked,
            "ok": self.ok,
            "failures": [
                {"entry": f.entry_index, "record": f.record, "reason": f.reason}
                for f in self.failures
            ],
        }


def validate_manifest(
    manifest: DatasetManifest, required_splits: Sequence[Split] = ()
) -> ManifestReport:
    """Checks every entry and reports failures; never raises for data problems."""
    report = ManifestReport(checked=len(manifest.entries))
    seen_ids: dict[str, int] = {}

    for index, entry in enumerate(manifest.entries):
        record_path = manifest.resolve(entry.record)
        annotation_path = manifest.resolve(entry.annotations)
        missing = [p for p in (record_path, annotation_path) if not p.exists()]
        for path in missing:
            report.failures.append(ManifestFailure(index, entry.record, f"missing file: {path}"))
        if missing:
            continue

        try:
            record = load_entry(manifest, entry)
        except (RecordFormatError, RecordValidationError, AnnotationError) as e:
            report.failures.append(ManifestFailure(index, entry.record, e.message))
            continue

        if abs(record.ga_weeks - entry.ga_weeks) > 1e-6:
            report.failures.append(
                ManifestFailure(
                    index,
                    entry.record,
                    f"ga_weeks {entry.ga_weeks} disagrees with record header ({record.ga_weeks})",
                )
            )
        if record.record_id in seen_ids:
            report.failures.append(
                ManifestFailure(
                    index,
                    entry.record,
                    f"duplicate record_id '{record.record_id}' (also entry {seen_ids[record.record_id]})",
                )
            )
        else:
            seen_ids[record.record_id] = index

    present = manifest.splits()
    for split in required_splits:
        if split not in present:
            report.failures.append(ManifestFailure(None, None, f"split '{split}' is empty"))
    return report
