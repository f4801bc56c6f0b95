"""Training engine: weighted cross-entropy, SGD with momentum, LARS, GA weighting, ensembles."""

import csv
import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from preterm_sda.core.checkpoint import load_params, save_params
from preterm_sda.core.dsp import WindowBatch
from preterm_sda.core.errors import (
    ArchitectureMismatchError,
    CheckpointError,
    NonFiniteGradientError,
    RunningStatsError,
    TrainingError,
    UndefinedMetricError,
)
from preterm_sda.core.metrics import auc_concat
from preterm_sda.core.net import (
    STANDARD,
    TINY,
    Architecture,
    NetworkParams,
    init_params,
    model_backward,
    model_forward,
    predict_proba,
)
from preterm_sda.utils.config import TrainConfig
from preterm_sda.utils.constants import CHECKPOINT_SUFFIX

logger = logging.getLogger(__name__)

ARCHITECTURES: dict[str, Architecture] = {"standard": STANDARD, "tiny": TINY}
ENSEMBLE_SIZE = 3
ENSEMBLE_FORMAT = "preterm-sda-ensemble"
LOG_COLUMNS = ["epoch", "train_loss", "val_auc", "lr", "stopped_flag"]


# --- GA groups ---


@dataclass(frozen=True)
class GaGroup:
    """A GA interval; ``None`` bounds are open-ended."""

    group_id: int
    lower_weeks: float | None
    upper_weeks: float | None
    lower_inclusive: bool = True
    upper_inclusive: bool = True
    decay_span_weeks: float = 4.0

    def __post_init__(self) -> None:
        if self.decay_span_weeks <= 0:
            raise ValueError("decay_span_weeks must be positive")

    def contains(self, ga_weeks: float) -> bool:
        if self.lower_weeks is not None:
            if ga_weeks < self.lower_weeks or (ga_weeks == self.lower_weeks and not self.lower_inclusive):
                return False
        if self.upper_weeks is not None:
            if ga_weeks > self.upper_weeks or (ga_weeks == self.upper_weeks and not self.upper_inclusive):
                return False
        return True

    def distance_weeks(self, ga_weeks: float) -> float:
        """Distance to the nearest group boundary; 0 inside the group."""
        if self.contains(ga_weeks):
            return 0.0
        # An excluded boundary is still at distance 0, so GA 29.0 weighs 1.0 for group 3 too.
        if self.lower_weeks is not None and ga_weeks <= self.lower_weeks:
            return self.lower_weeks - ga_weeks
        return ga_weeks - self.upper_weeks  # type: ignore[operator]

    def with_span(self, decay_span_weeks: float) -> "GaGroup":
        return GaGroup(
            self.group_id,
            self.lower_weeks,
            self.upper_weeks,
            self.lower_inclusive,
            self.upper_inclusive,
            decay_span_weeks,
        )


GA_GROUPS: dict[int, GaGroup] = {
    1: GaGroup(1, None, 26.0, upper_inclusive=False),
    2: GaGroup(2, 26.0, 29.0),
    3: GaGroup(3, 29.0, None, lower_inclusive=False),
}


def ga_group(group_id: int, decay_span_weeks: float = 4.0) -> GaGroup:
    if group_id not in GA_GROUPS:
        raise TrainingError(f"GA group must be one of {sorted(GA_GROUPS)}, got {group_id}")
    return GA_GROUPS[group_id].with_span(decay_span_weeks)


def group_of(ga_weeks: float) -> int:
    for group_id, group in GA_GROUPS.items():
        if group.contains(ga_weeks):
            return group_id
    raise TrainingError(f"GA {ga_weeks} falls in no group")


def ga_membership_weight(ga_weeks: float, group: GaGroup) -> float:
    """1 inside the group, decaying linearly to 0 over ``decay_span_weeks`` outside it."""
    return max(0.0, 1.0 - group.distance_weeks(ga_weeks) / group.decay_span_weeks)


# --- Loss and optimizer ---


def weighted_cross_entropy(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Mean of ``-w * log(p[label] + 1e-12)`` weighted by total weight; 0 when all weights are 0."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    total = float(weights.sum())
    if total <= 0:
        return 0.0
    picked = probs[np.arange(labels.size), labels]
    return float(np.sum(-weights * np.log(picked + 1e-12)) / total)


def lars_scale(
    layer_weights: np.ndarray,
    layer_grads: np.ndarray,
    floor: float = 1e-8,
    trust_coefficient: float = 1.0,
) -> np.ndarray:
    """Rescales a gradient tensor by ``trust * ||w|| / max(||g||, floor)``."""
    grad_norm = float(np.linalg.norm(layer_grads))
    if grad_norm == 0.0:
        return np.zeros_like(layer_grads)
    ratio = trust_coefficient * float(np.linalg.norm(layer_weights)) / max(grad_norm, floor)
    return (ratio * layer_grads).astype(layer_grads.dtype, copy=False)


def sgd_momentum_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    config: TrainConfig,
) -> tuple[NetworkParams, dict[str, np.ndarray]]:
    """One update of every trainable tensor; returns new params and velocity, inputs untouched."""
    names = params.trainable_names()
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(f"Non-finite gradient in {name}")

    tensors = dict(params.tensors)
    new_velocity: dict[str, np.ndarray] = {}
    for name in names:
        weight = params.tensors[name]
        grad = grads[name]
        if grad.shape != weight.shape:
            raise TrainingError(f"Gradient for {name} has shape {grad.shape}, expected {weight.shape}")
        if config.use_lars:
            grad = lars_scale(weight, grad, config.lars_trust_floor, config.lars_trust_coefficient)
        v = config.momentum * velocity.get(name, np.zeros_like(weight)) + grad
        new_velocity[name] = v
        tensors[name] = (weight - config.lr * v).astype(weight.dtype, copy=False)
    return NetworkParams(params.architecture, tensors, params.stats_batches), new_velocity


# --- Early stopping ---


class EarlyStopping:
    """Tracks the best validation score; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0
        self.best_state: Any = None
        self.stale_epochs = 0

    def update(self, epoch: int, score: float, state: Any) -> bool:
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.best_state = state
            self.stale_epochs = 0
        else:
            self.stale_epochs += 1
        return self.stale_epochs >= self.patience


# --- Checkpoints and ensembles ---


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    lr: float
    stopped_flag: bool


@dataclass
class ModelCheckpoint:
    params: NetworkParams
    val_auc: float
    epoch: int
    config: dict[str, Any]
    val_record_ids: tuple[str, ...]
    train_record_ids: tuple[str, ...] = ()
    history: list[EpochLog] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.val_auc <= 1.0:
            raise CheckpointError(f"val_auc must lie in [0, 1], got {self.val_auc}")
        self.val_record_ids = tuple(self.val_record_ids)
        self.train_record_ids = tuple(self.train_record_ids)

    def metadata(self) -> dict[str, Any]:
        return {
            "val_auc": self.val_auc,
            "epoch": self.epoch,
            "config": self.config,
            "val_record_ids": list(self.val_record_ids),
            "train_record_ids": list(self.train_record_ids),
            "history": [asdict(entry) for entry in self.history],
        }

    def save(self, path: Path | str) -> None:
        save_params(self.params, path, self.metadata())

    @classmethod
    def load(cls, path: Path | str, dtype: Any = np.float64) -> "ModelCheckpoint":
        params, metadata = load_params(path, dtype)
        try:
            return cls(
                params=params,
                val_auc=float(metadata["val_auc"]),
                epoch=int(metadata["epoch"]),
                config=dict(metadata.get("config", {})),
                val_record_ids=tuple(metadata["val_record_ids"]),
                train_record_ids=tuple(metadata.get("train_record_ids", ())),
                history=[EpochLog(**entry) for entry in metadata.get("history", [])],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Checkpoint {path} lacks training metadata: {e}") from e

    def write_log(self, path: Path | str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for entry in self.history:
                writer.writerow(
                    [entry.epoch, repr(entry.train_loss), repr(entry.val_auc), repr(entry.lr), int(entry.stopped_flag)]
                )


@dataclass
class EnsembleModel:
    """Three checkpoints trained with different held-out validation records."""

    members: list[ModelCheckpoint]

    def __post_init__(self) -> None:
        if len(self.members) != ENSEMBLE_SIZE:
            raise TrainingError(f"An ensemble has exactly {ENSEMBLE_SIZE} members, got {len(self.members)}")
        val_sets = {frozenset(m.val_record_ids) for m in self.members}
        if len(val_sets) != ENSEMBLE_SIZE:
            raise TrainingError("Ensemble members must have pairwise-different validation record sets")
        hashes = {m.params.architecture_hash for m in self.members}
        if len(hashes) != 1:
            raise ArchitectureMismatchError("Ensemble members use different architectures")

    @property
    def architecture_hash(self) -> str:
        return self.members[0].params.architecture_hash

    def save(self, directory: Path | str, stem: str = "model", extra: dict[str, Any] | None = None) -> Path:
        """Writes one checkpoint and training log per member plus the ``<stem>.json`` manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, member in enumerate(self.members):
            name = f"{stem}.member{i}{CHECKPOINT_SUFFIX}"
            member.save(directory / name)
            member.write_log(directory / f"{stem}.member{i}.log.csv")
            files.append(name)
        manifest = {
            "format": ENSEMBLE_FORMAT,
            "architecture_hash": self.architecture_hash,
            "members": files,
            "val_aucs": [m.val_auc for m in self.members],
            **(extra or {}),
        }
        path = directory / f"{stem}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("Wrote ensemble manifest %s", path)
        return path

    @classmethod
    def load(cls, path: Path | str, dtype: Any = np.float64) -> "EnsembleModel":
        path = Path(path)
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"Cannot read ensemble manifest {path}: {e}") from e
        if manifest.get("format") != ENSEMBLE_FORMAT:
            raise CheckpointError(f"{path} is not an ensemble manifest")
        members = [ModelCheckpoint.load(path.parent / name, dtype) for name in manifest["members"]]
        ensemble = cls(members)
        if ensemble.architecture_hash != manifest.get("architecture_hash"):
            raise ArchitectureMismatchError(f"{path}: members do not match the recorded architecture")
        return ensemble


def load_model(path: Path | str, dtype: Any = np.float64) -> "ModelCheckpoint | EnsembleModel":
    """Loads either a single checkpoint or an ensemble manifest."""
    path = Path(path)
    if path.suffix == ".json":
        return EnsembleModel.load(path, dtype)
    return ModelCheckpoint.load(path, dtype)


# --- Training loop ---


def _training_pool(batches: Sequence[WindowBatch]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated non-edge windows with positive sample weight."""
    kept = [b.without_edges() for b in batches]
    kept = [b.subset(b.sample_weights > 0) for b in kept]
    kept = [b for b in kept if len(b)]
    if not kept:
        raise TrainingError("No training windows with a positive sample weight")
    if len({b.n_channels for b in kept}) != 1:
        raise TrainingError("Training records must share a channel count")
    return (
        np.concatenate([b.windows for b in kept]),
        np.concatenate([b.labels for b in kept]),
        np.concatenate([b.sample_weights for b in kept]),
    )


def oversample_indices(labels: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """All indices, plus repeated seizure indices until seizure:non-seizure reaches ``ratio``."""
    base = np.arange(labels.size)
    positives = np.flatnonzero(labels == 1)
    negatives = labels.size - positives.size
    if ratio <= 0 or positives.size == 0 or negatives == 0:
        return base
    extra = int(math.ceil(ratio * negatives)) - positives.size
    if extra <= 0:
        return base
    return np.concatenate([base, rng.choice(positives, size=extra, replace=True)])


def epoch_order(labels: np.ndarray, config: TrainConfig, epoch: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, epoch])
    indices = oversample_indices(labels, config.seizure_oversample_ratio, rng)
    return rng.permutation(indices)


def validation_auc(params: NetworkParams, val_batches: Sequence[WindowBatch], batch_size: int = 256) -> float:
    """Concatenated AUC of raw probabilities over every validation window."""
    return auc_concat(
        (predict_proba(params, batch.windows.astype(params.dtype), batch_size), batch.labels)
        for batch in val_batches
    )


def train_model(
    train_batches: Sequence[WindowBatch],
    val_batches: Sequence[WindowBatch],
    config: TrainConfig,
    init: NetworkParams,
    label: str = "model",
) -> ModelCheckpoint:
    """Minibatch training with early stopping on validation AUC; returns the best epoch's params."""
    if not val_batches:
        raise TrainingError("Validation set is empty")
    train_ids = {b.record_id for b in train_batches}
    val_ids = {b.record_id for b in val_batches}
    if train_ids & val_ids:
        raise TrainingError(f"Records in both training and validation sets: {sorted(train_ids & val_ids)}")
    val_labels = np.concatenate([b.labels for b in val_batches])
    if val_labels.size == 0 or val_labels.min() == val_labels.max():
        raise TrainingError("Validation labels contain a single class; AUC is undefined")

    dtype = np.dtype(config.dtype)
    params = init.astype(dtype)
    windows, labels, weights = _training_pool(train_batches)
    windows = windows.astype(dtype)
    velocity: dict[str, np.ndarray] = {}
    stopper = EarlyStopping(config.patience_epochs)
    history: list[EpochLog] = []
    logger.info(
        "Training %s on %d windows from %d records, validating on %d records",
        label,
        labels.size,
        len(train_ids),
        len(val_ids),
    )

    for epoch in range(1, config.max_epochs + 1):
        order = epoch_order(labels, config, epoch)
        loss_sum = 0.0
        weight_sum = 0.0
        try:
            for start in range(0, order.size, config.batch_size):
                idx = order[start : start + config.batch_size]
                batch_weights = weights[idx]
                total = float(batch_weights.sum())
                _, cache = model_forward(params, windows[idx], "train")
                loss_sum += weighted_cross_entropy(cache.probs, labels[idx], batch_weights) * total
                weight_sum += total
                grads = model_backward(params, cache, labels[idx], batch_weights, loss_scale=1.0 / total)
                params, velocity = sgd_momentum_step(params, grads, velocity, config)
                params = params.with_running_stats(cache.running_stats)
        except NonFiniteGradientError as e:
            logger.warning("%s: epoch %d aborted: %s", label, epoch, e.message)

        try:
            val_auc = validation_auc(params, val_batches)
        except (RunningStatsError, UndefinedMetricError) as e:
            logger.warning("%s: no validation AUC after epoch %d: %s", label, epoch, e.message)
            val_auc = float("nan")
        stop = stopper.update(epoch, val_auc, params)
        train_loss = loss_sum / weight_sum if weight_sum > 0 else float("nan")
        history.append(EpochLog(epoch, train_loss, val_auc, config.lr, stop))
        logger.info("%s epoch %d: train_loss=%.5f val_auc=%.5f", label, epoch, train_loss, val_auc)
        if stop:
            logger.info("%s: early stop after epoch %d (best epoch %d)", label, epoch, stopper.best_epoch)
            break

    if stopper.best_state is None:
        raise TrainingError(f"{label}: validation AUC was never computed")
    return ModelCheckpoint(
        params=stopper.best_state,
        val_auc=float(stopper.best_score),
        epoch=stopper.best_epoch,
        config=config.model_dump(mode="json"),
        val_record_ids=tuple(sorted(val_ids)),
        train_record_ids=tuple(sorted(train_ids)),
        history=history,
    )


# --- Ensembles ---


def member_seeds(seed: int, n: int = ENSEMBLE_SIZE) -> list[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n)]


def choose_validation_sets(
    batches: Sequence[WindowBatch],
    n_val: int,
    seed: int,
    candidate_ids: Sequence[str] | None = None,
    n_sets: int = ENSEMBLE_SIZE,
) -> list[tuple[str, ...]]:
    """Pairwise-different validation record sets drawn from ``candidate_ids``.

    Each set must hold both classes, and the remaining records must still contain
    seizure windows.
    """
    by_id = {b.record_id: b for b in batches}
    candidates = sorted(candidate_ids if candidate_ids is not None else by_id)
    if len(candidates) < n_val or len(by_id) <= n_val:
        raise TrainingError(f"Too few records to hold out {n_val} for validation")
    rng = np.random.default_rng(seed)
    chosen: list[tuple[str, ...]] = []
    for _ in range(500):
        pick = tuple(sorted(rng.choice(candidates, size=n_val, replace=False).tolist()))
        if pick in chosen:
            continue
        val_labels = np.concatenate([by_id[i].labels for i in pick])
        if val_labels.min() == val_labels.max():
            continue
        if not any(by_id[i].labels.any() for i in by_id if i not in pick):
            continue
        chosen.append(pick)
        if len(chosen) == n_sets:
            return chosen
    raise TrainingError(f"Too few records to form {n_sets} distinct validation sets")


def _train_members(
    batches: Sequence[WindowBatch],
    config: TrainConfig,
    val_sets: list[tuple[str, ...]],
    inits: Sequence[NetworkParams],
    seeds: Sequence[int],
    label: str,
) -> EnsembleModel:
    members = []
    for i, (val_set, init, seed) in enumerate(zip(val_sets, inits, seeds, strict=True)):
        held_out = set(val_set)
        member_config = config.model_copy(update={"seed": seed})
        members.append(
            train_model(
                [b for b in batches if b.record_id not in held_out],
                [b for b in batches if b.record_id in held_out],
                member_config,
                init,
                label=f"{label}[{i}]",
            )
        )
    return EnsembleModel(members)


def train_ensemble(
    batches: Sequence[WindowBatch],
    config: TrainConfig,
    inits: Sequence[NetworkParams] | None = None,
    n_val: int | None = None,
) -> EnsembleModel:
    """Three runs, each holding out a different record subset for validation."""
    if len(batches) < 4:
        raise TrainingError(f"An ensemble needs at least 4 records, got {len(batches)}")
    seeds = member_seeds(config.seed)
    val_sets = choose_validation_sets(batches, n_val or config.val_records, config.seed)
    if inits is None:
        architecture = ARCHITECTURES[config.architecture]
        inits = [init_params(seed, architecture, np.dtype(config.dtype)) for seed in seeds]
    return _train_members(batches, config, val_sets, inits, seeds, "ensemble")


def transfer_init(pretrained: ModelCheckpoint, architecture: Architecture | None = None) -> NetworkParams:
    """A copy of the pretrained parameters; optimizer state starts fresh and nothing is frozen."""
    if architecture is not None and pretrained.params.architecture_hash != architecture.hash:
        raise ArchitectureMismatchError(
            f"Pretrained architecture {pretrained.params.architecture_hash} "
            f"does not match {architecture.name} ({architecture.hash})"
        )
    return pretrained.params.copy()


def train_ga_specific(
    batches: Sequence[WindowBatch],
    group: GaGroup,
    pretrained: EnsembleModel | None,
    config: TrainConfig,
) -> EnsembleModel:
    """GA-specific ensemble.

    With a pretrained ensemble, every record participates with its GA membership weight and
    LARS is enabled. Without one, members start from a fresh initialisation and only
    in-group records are used, without LARS.
    """
    transfer = pretrained is not None
    weighted = []
    for batch in batches:
        if transfer:
            weight = ga_membership_weight(batch.ga_weeks, group)
        else:
            weight = 1.0 if group.contains(batch.ga_weeks) else 0.0
        weighted.append(batch.with_weights(batch.sample_weights * weight))

    in_group = [b.record_id for b in batches if group.contains(b.ga_weeks)]
    if not in_group:
        raise TrainingError(f"No records in GA group {group.group_id}")
    try:
        val_sets = choose_validation_sets(weighted, config.ga_val_records, config.seed, in_group)
    except TrainingError:
        logger.warning(
            "Group %d has too few records for in-group validation; drawing from all records",
            group.group_id,
        )
        val_sets = choose_validation_sets(weighted, config.ga_val_records, config.seed)

    member_config = config.model_copy(update={"use_lars": transfer})
    seeds = member_seeds(config.seed)
    if transfer:
        architecture = ARCHITECTURES[config.architecture]
        inits = [transfer_init(member, architecture) for member in pretrained.members]
    else:
        architecture = ARCHITECTURES[config.architecture]
        inits = [init_params(seed, architecture, np.dtype(config.dtype)) for seed in seeds]
    label = f"ga{group.group_id}-{'transfer' if transfer else 'scratch'}"
    return _train_members(weighted, member_config, val_sets, inits, seeds, label)
