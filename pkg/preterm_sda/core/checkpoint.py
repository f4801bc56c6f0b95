"""Checkpoint files: a JSON manifest line followed by every tensor as little-endian float32."""

import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from preterm_sda.core.eeg_io import decode_floats, read_framed, write_framed
from preterm_sda.core.errors import ArchitectureMismatchError, CheckpointError, RecordFormatError
from preterm_sda.core.net import Architecture, NetworkParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "preterm-sda-checkpoint"
CHECKPOINT_VERSION = 1


def save_params(params: NetworkParams, path: Path | str, metadata: dict[str, Any] | None = None) -> None:
    names = params.names()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": asdict(params.architecture),
        "architecture_hash": params.architecture_hash,
        "layers": [layer.name for layer in params.architecture.layers()],
        "tensors": [{"name": name, "shape": list(params.tensors[name].shape)} for name in names],
        "stats_batches": params.stats_batches,
        "metadata": metadata or {},
    }
    write_framed(Path(path), header, [params.tensors[name] for name in names])
    logger.info("Wrote checkpoint %s", path)


def load_params(path: Path | str, dtype: Any = np.float64) -> tuple[NetworkParams, dict[str, Any]]:
    """Returns the parameters and the metadata stored with them."""
    path = Path(path)
    try:
        header, payload = read_framed(path)
    except RecordFormatError as e:
        raise CheckpointError(e.message) from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")

    try:
        architecture = Architecture(**header["architecture"])
        specs = header["tensors"]
        sizes = [int(np.prod(spec["shape"])) for spec in specs]
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"Malformed checkpoint manifest in {path}: {e}") from e
    if architecture.hash != header.get("architecture_hash"):
        raise ArchitectureMismatchError(
            f"{path}: stored architecture hash {header.get('architecture_hash')} "
            f"does not match its architecture ({architecture.hash})"
        )

    try:
        flat = decode_floats(payload, sum(sizes), path)
    except RecordFormatError as e:
        raise CheckpointError(e.message) from e
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for spec, size in zip(specs, sizes, strict=True):
        tensors[spec["name"]] = flat[offset : offset + size].reshape(spec["shape"]).astype(dtype)
        offset += size
    params = NetworkParams(architecture, tensors, int(header.get("stats_batches", 0)))
    return params, dict(header.get("metadata", {}))
