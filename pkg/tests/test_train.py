import logging
import math

import numpy as np
import pytest

from preterm_sda.core.errors import ArchitectureMismatchError, NonFiniteGradientError, TrainingError
from preterm_sda.core.net import STANDARD, TINY, model_backward, model_forward, predict_proba
from preterm_sda.core.train import (
    EarlyStopping,
    EnsembleModel,
    ModelCheckpoint,
    choose_validation_sets,
    epoch_order,
    ga_group,
    ga_membership_weight,
    group_of,
    lars_scale,
    load_model,
    member_seeds,
    oversample_indices,
    sgd_momentum_step,
    train_ensemble,
    train_ga_specific,
    train_model,
    transfer_init,
    weighted_cross_entropy,
)
from preterm_sda.utils.config import TrainConfig


def _labels(n: int = 24, onset: int = 8, offset: int = 16) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[onset:offset] = 1
    return labels


def _checkpoint(params, val_ids, val_auc=0.7):
    return ModelCheckpoint(params=params, val_auc=val_auc, epoch=1, config={}, val_record_ids=tuple(val_ids))


@pytest.mark.parametrize(
    "prob, weight, expected",
    [(1.0, 1.0, 0.0), (0.5, 1.0, math.log(2)), (0.01, 0.0, 0.0)],
)
def test_weighted_cross_entropy(prob, weight, expected):
    loss = weighted_cross_entropy(np.array([[prob, 1 - prob]]), np.array([0]), np.array([weight]))
    assert loss == pytest.approx(expected, abs=1e-9)


def test_zero_weight_windows_produce_zero_gradient(rng, tiny_params):
    windows = rng.normal(0, 50, size=(4, 2, 256))
    _, cache = model_forward(tiny_params, windows, "train")
    grads = model_backward(tiny_params, cache, np.array([0, 1, 0, 1]), np.zeros(4))
    assert all(not g.any() for g in grads.values())


def test_momentum_accumulates_across_steps(tiny_params):
    config = TrainConfig(lr=0.01, momentum=0.9)
    grads = {name: np.ones_like(tiny_params.tensors[name]) for name in tiny_params.trainable_names()}
    name = tiny_params.trainable_names()[0]
    start = tiny_params.tensors[name].copy()

    first, velocity = sgd_momentum_step(tiny_params, grads, {}, config)
    second, _ = sgd_momentum_step(first, grads, velocity, config)
    np.testing.assert_allclose(start - first.tensors[name], 0.01)
    np.testing.assert_allclose(first.tensors[name] - second.tensors[name], 0.019)
    # Inputs are not modified.
    np.testing.assert_array_equal(tiny_params.tensors[name], start)


def test_zero_gradients_leave_params_unchanged(tiny_params):
    grads = {name: np.zeros_like(tiny_params.tensors[name]) for name in tiny_params.trainable_names()}
    updated, _ = sgd_momentum_step(tiny_params, grads, {}, TrainConfig(momentum=0.0))
    for name in tiny_params.names():
        np.testing.assert_array_equal(updated.tensors[name], tiny_params.tensors[name])


def test_non_finite_gradient_is_rejected(tiny_params):
    grads = {name: np.zeros_like(tiny_params.tensors[name]) for name in tiny_params.trainable_names()}
    grads[tiny_params.trainable_names()[-1]][0] = np.nan
    with pytest.raises(NonFiniteGradientError):
        sgd_momentum_step(tiny_params, grads, {}, TrainConfig())


def test_lars_scale_example():
    w = np.array([2.0, 0.0])
    g = np.array([0.0, 4.0])
    np.testing.assert_allclose(lars_scale(w, g), 0.5 * g)
    np.testing.assert_array_equal(lars_scale(w, np.zeros(2)), np.zeros(2))


def test_lars_step_is_invariant_to_gradient_scale(rng, tiny_params):
    config = TrainConfig(momentum=0.0, use_lars=True)
    raw = {name: rng.normal(size=tiny_params.tensors[name].shape) for name in tiny_params.trainable_names()}
    reference, _ = sgd_momentum_step(tiny_params, raw, {}, config)
    for c in (1e-6, 1.0, 1e6):
        scaled = {name: c * g for name, g in raw.items()}
        updated, _ = sgd_momentum_step(tiny_params, scaled, {}, config)
        for name in tiny_params.trainable_names():
            np.testing.assert_allclose(updated.tensors[name], reference.tensors[name], rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize(
    "ga, group_id, expected",
    [(25.0, 1, 1.0), (30.0, 1, 0.0), (28.0, 2, 1.0), (28.0, 1, 0.5), (29.0, 3, 1.0), (31.0, 3, 1.0), (27.0, 3, 0.5)],
)
def test_ga_membership_weight(ga, group_id, expected):
    assert ga_membership_weight(ga, ga_group(group_id)) == pytest.approx(expected)


def test_ga_group_boundaries():
    assert group_of(25.9) == 1
    assert group_of(26.0) == 2
    assert group_of(29.0) == 2
    assert group_of(29.1) == 3
    with pytest.raises(TrainingError):
        ga_group(4)


@pytest.mark.parametrize("ga, home, neighbour", [(29.0, 2, 3), (26.0, 2, 1)])
def test_excluded_boundary_gets_full_weight_in_neighbouring_group(ga, home, neighbour):
    assert group_of(ga) == home
    assert not ga_group(neighbour).contains(ga)
    assert ga_group(neighbour).distance_weeks(ga) == 0.0
    assert ga_membership_weight(ga, ga_group(neighbour)) == 1.0
    assert ga_membership_weight(ga, ga_group(home)) == 1.0


def test_early_stopping_patience_rule():
    stopper = EarlyStopping(patience=8)
    stopped_at = None
    for epoch in range(1, 101):
        score = min(epoch, 20) / 100
        if stopper.update(epoch, score, state=epoch):
            stopped_at = epoch
            break
    assert stopped_at == 28
    assert stopper.best_epoch == 20
    assert stopper.best_state == 20


def test_oversampling_reaches_ratio():
    labels = np.array([1, 1] + [0] * 18)
    indices = oversample_indices(labels, 0.25, np.random.default_rng(0))
    assert indices.size == 23
    assert labels[indices].sum() == 5
    assert oversample_indices(labels, 0.0, np.random.default_rng(0)).size == 20


def test_epoch_order_is_seeded_per_epoch():
    labels = _labels()
    config = TrainConfig(seed=5)
    np.testing.assert_array_equal(epoch_order(labels, config, 1), epoch_order(labels, config, 1))
    assert not np.array_equal(epoch_order(labels, config, 1), epoch_order(labels, config, 2))


def test_train_model_validation_errors(make_batch, fast_train_config, tiny_params):
    train = [make_batch("a", _labels())]
    with pytest.raises(TrainingError, match="empty"):
        train_model(train, [], fast_train_config, tiny_params)
    with pytest.raises(TrainingError, match="both training and validation"):
        train_model(train, [make_batch("a", _labels())], fast_train_config, tiny_params)
    with pytest.raises(TrainingError, match="single class"):
        train_model(train, [make_batch("b", np.zeros(24))], fast_train_config, tiny_params)


def test_train_model_returns_best_epoch(make_batch, fast_train_config, tiny_params):
    train = [make_batch("a", _labels(), seed=1), make_batch("b", _labels(onset=2, offset=9), seed=2)]
    val = [make_batch("c", _labels(), seed=3)]
    checkpoint = train_model(train, val, fast_train_config, tiny_params, label="unit")

    assert checkpoint.val_record_ids == ("c",)
    assert checkpoint.train_record_ids == ("a", "b")
    assert 1 <= checkpoint.epoch <= 2
    assert len(checkpoint.history) == 2
    best = max(entry.val_auc for entry in checkpoint.history)
    assert checkpoint.val_auc == best
    assert checkpoint.params.stats_batches > 0


def test_training_is_deterministic(make_batch, fast_train_config, tiny_params):
    train = [make_batch("a", _labels(), seed=1)]
    val = [make_batch("c", _labels(), seed=3)]
    first = train_model(train, val, fast_train_config, tiny_params)
    second = train_model(train, val, fast_train_config, tiny_params)
    for name in first.params.names():
        np.testing.assert_array_equal(first.params.tensors[name], second.params.tensors[name])


def test_single_epoch_returns_first_epoch(make_batch, fast_train_config, tiny_params):
    config = fast_train_config.model_copy(update={"max_epochs": 1})
    checkpoint = train_model([make_batch("a", _labels())], [make_batch("c", _labels())], config, tiny_params)
    assert checkpoint.epoch == 1
    assert len(checkpoint.history) == 1


def test_checkpoint_log_and_reload(tmp_path, make_batch, fast_train_config, tiny_params):
    checkpoint = train_model([make_batch("a", _labels())], [make_batch("c", _labels())], fast_train_config, tiny_params)
    checkpoint.save(tmp_path / "m.ckpt")
    checkpoint.write_log(tmp_path / "m.log.csv")

    loaded = load_model(tmp_path / "m.ckpt")
    assert loaded.val_auc == checkpoint.val_auc
    assert loaded.history == checkpoint.history
    lines = (tmp_path / "m.log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_auc,lr,stopped_flag"
    assert len(lines) == 3


def test_validation_sets_are_distinct_and_keep_seizures(make_batch):
    batches = [make_batch(f"r{i}", _labels(), seed=i) for i in range(5)]
    sets = choose_validation_sets(batches, n_val=2, seed=0)
    assert len(set(sets)) == 3
    assert all(len(s) == 2 for s in sets)
    with pytest.raises(TrainingError):
        choose_validation_sets(batches[:2], n_val=2, seed=0)


def test_member_seeds_are_distinct_and_stable():
    assert member_seeds(4) == member_seeds(4)
    assert len(set(member_seeds(4))) == 3


def test_train_ensemble_members_use_different_validation_records(make_batch, fast_train_config):
    batches = [make_batch(f"r{i}", _labels(), seed=i) for i in range(5)]
    config = fast_train_config.model_copy(update={"max_epochs": 1})
    ensemble = train_ensemble(batches, config)

    val_sets = [m.val_record_ids for m in ensemble.members]
    assert len(set(val_sets)) == 3
    for member in ensemble.members:
        assert not set(member.val_record_ids) & set(member.train_record_ids)
    with pytest.raises(TrainingError, match="at least 4"):
        train_ensemble(batches[:3], config)


def test_ensemble_requires_distinct_validation_sets(tiny_params):
    with pytest.raises(TrainingError, match="pairwise-different"):
        EnsembleModel([_checkpoint(tiny_params, ["a"]) for _ in range(3)])
    with pytest.raises(TrainingError, match="exactly 3"):
        EnsembleModel([_checkpoint(tiny_params, ["a"])])


def test_ensemble_save_and_load(tmp_path, tiny_params):
    ensemble = EnsembleModel([_checkpoint(tiny_params, [rid], 0.6 + i / 10) for i, rid in enumerate("abc")])
    path = ensemble.save(tmp_path, stem="ensemble", extra={"mode": "ensemble"})
    assert path.name == "ensemble.json"
    assert (tmp_path / "ensemble.member2.ckpt").exists()
    assert (tmp_path / "ensemble.member0.log.csv").exists()

    loaded = load_model(path)
    assert isinstance(loaded, EnsembleModel)
    assert [m.val_auc for m in loaded.members] == pytest.approx([0.6, 0.7, 0.8])
    assert [m.val_record_ids for m in loaded.members] == [("a",), ("b",), ("c",)]


def test_transfer_init_copies_pretrained_params(rng, tiny_params):
    pretrained = _checkpoint(tiny_params, ["a"])
    init = transfer_init(pretrained, TINY)
    windows = rng.normal(0, 50, size=(5, 2, 256))
    np.testing.assert_array_equal(predict_proba(init, windows), predict_proba(tiny_params, windows))
    init.tensors[init.trainable_names()[0]][...] = 0.0
    assert tiny_params.tensors[tiny_params.trainable_names()[0]].any()
    with pytest.raises(ArchitectureMismatchError):
        transfer_init(pretrained, STANDARD)


def _ga_cohort(make_batch):
    gas = {"g25": 25.0, "g26": 26.0, "g27": 27.0, "g29": 29.0, "g30": 30.0, "g33": 33.0}
    return [make_batch(rid, _labels(), ga_weeks=ga, seed=i) for i, (rid, ga) in enumerate(gas.items())]


def test_ga_transfer_weights_every_record(mocker, make_batch, fast_train_config, tiny_params):
    captured = mocker.patch("preterm_sda.core.train._train_members", return_value="ensemble")
    pretrained = EnsembleModel([_checkpoint(tiny_params, [rid]) for rid in "abc"])

    result = train_ga_specific(_ga_cohort(make_batch), ga_group(2), pretrained, fast_train_config)

    assert result == "ensemble"
    batches, config, val_sets, inits, _, label = captured.call_args.args
    weights = {b.record_id: set(b.sample_weights.tolist()) for b in batches}
    assert weights == {"g25": {0.75}, "g26": {1.0}, "g27": {1.0}, "g29": {1.0}, "g30": {0.75}, "g33": {0.0}}
    assert config.use_lars
    assert all(set(s) <= {"g26", "g27", "g29"} for s in val_sets)
    assert len(inits) == 3
    assert label == "ga2-transfer"


def test_ga_scratch_excludes_other_groups(mocker, make_batch, fast_train_config):
    captured = mocker.patch("preterm_sda.core.train._train_members", return_value="ensemble")

    train_ga_specific(_ga_cohort(make_batch), ga_group(2), None, fast_train_config)

    batches, config, _, inits, seeds, label = captured.call_args.args
    weights = {b.record_id: float(b.sample_weights[0]) for b in batches}
    assert weights == {"g25": 0.0, "g26": 1.0, "g27": 1.0, "g29": 1.0, "g30": 0.0, "g33": 0.0}
    assert not config.use_lars
    assert inits[0].stats_batches == 0
    assert len(seeds) == 3
    assert label == "ga2-scratch"


def test_ga_validation_falls_back_to_all_records(mocker, make_batch, fast_train_config, caplog):
    captured = mocker.patch("preterm_sda.core.train._train_members", return_value="ensemble")
    cohort = [b for b in _ga_cohort(make_batch) if b.record_id != "g29"]

    with caplog.at_level(logging.WARNING):
        train_ga_specific(cohort, ga_group(2), None, fast_train_config)

    assert "too few records" in caplog.text
    val_sets = captured.call_args.args[2]
    assert len(set(val_sets)) == 3


def test_ga_group_without_records_is_rejected(make_batch, fast_train_config):
    cohort = [b for b in _ga_cohort(make_batch) if b.ga_weeks < 29.5]
    with pytest.raises(TrainingError, match="No records"):
        train_ga_specific(cohort, ga_group(3), None, fast_train_config)
