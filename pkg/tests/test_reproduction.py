"""Desk-scale reproduction of the training procedure on generated cohorts."""

import numpy as np
import pytest

from preterm_sda.core.dataset import prepare_split
from preterm_sda.core.infer import moving_average, trace_from_batch
from preterm_sda.core.metrics import auc_concat
from preterm_sda.core.synth import generate_cohort
from preterm_sda.core.train import ga_group, train_ensemble, train_ga_specific
from preterm_sda.utils.config import SynthConfig, TrainConfig

pytestmark = [pytest.mark.slow, pytest.mark.integration]

TRAIN = TrainConfig(
    architecture="standard",
    max_epochs=4,
    patience_epochs=2,
    batch_size=64,
    stride_s=8.0,
    val_records=2,
    ga_val_records=1,
    # A tenth of the default LARS step.
    lars_trust_coefficient=0.1,
    seed=5,
)


def _held_out_auc(model, manifest) -> float:
    records = prepare_split(manifest, ["test"], stride_s=4.0, edge_margin_s=0.0)
    traces = [moving_average(trace_from_batch(model, r.batch, r.duration_s), 5) for r in records]
    return auc_concat(zip(traces, [r.batch.labels for r in records], strict=True))


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    config = SynthConfig(
        n_infants=18,
        record_minutes=30.0,
        seizure_rate_per_hour=12.0,
        n_test_infants=4,
        n_val_infants=2,
        n_control_infants=1,
        seed=21,
    )
    return generate_cohort(config, tmp_path_factory.mktemp("cohort"))


@pytest.fixture(scope="module")
def ensemble(cohort):
    batches = [r.batch for r in prepare_split(cohort, ["train", "val"], stride_s=TRAIN.stride_s)]
    return train_ensemble(batches, TRAIN)


@pytest.fixture(scope="module")
def shifted_cohort(tmp_path_factory):
    # Mostly below 26 weeks, with a few group 2 infants.
    config = SynthConfig(
        n_infants=9,
        ga_range_weeks=(23.0, 27.0),
        record_minutes=10.0,
        seizure_rate_per_hour=18.0,
        n_test_infants=2,
        n_val_infants=1,
        n_control_infants=0,
        seed=33,
    )
    return generate_cohort(config, tmp_path_factory.mktemp("shifted"))


def test_ensemble_detects_held_out_seizures(cohort, ensemble):
    assert len(ensemble.members) == 3
    assert len({m.val_record_ids for m in ensemble.members}) == 3
    assert all(m.epoch <= TRAIN.max_epochs for m in ensemble.members)
    assert _held_out_auc(ensemble, cohort) >= 0.90


def test_ga_transfer_is_no_worse_than_training_from_scratch(shifted_cohort, ensemble):
    group = ga_group(1)
    config = TRAIN.model_copy(update={"stride_s": 4.0})
    batches = [r.batch for r in prepare_split(shifted_cohort, ["train", "val"], stride_s=config.stride_s)]

    transfer = train_ga_specific(batches, group, ensemble, config)
    scratch = train_ga_specific(batches, group, None, config)

    assert all(m.config["use_lars"] for m in transfer.members)
    assert not any(m.config["use_lars"] for m in scratch.members)
    assert _held_out_auc(transfer, shifted_cohort) >= _held_out_auc(scratch, shifted_cohort)


def test_fine_tuning_moves_every_convolution(shifted_cohort, ensemble):
    config = TRAIN.model_copy(update={"stride_s": 4.0, "max_epochs": 1})
    batches = [r.batch for r in prepare_split(shifted_cohort, ["train", "val"], stride_s=config.stride_s)]
    tuned = train_ga_specific(batches, ga_group(1), ensemble, config)

    for before, after in zip(ensemble.members, tuned.members, strict=True):
        conv_weights = [n for n in before.params.names() if n.startswith("conv") and n.endswith(".weight")]
        assert len(conv_weights) == 10
        for name in conv_weights:
            assert np.linalg.norm(after.params.tensors[name] - before.params.tensors[name]) > 0, name
