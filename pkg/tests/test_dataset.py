import numpy as np
import pytest

from preterm_sda.core.dataset import content_fingerprint, prepare_entry, prepare_split
from preterm_sda.core.errors import ManifestError
from preterm_sda.core.synth import generate_cohort


@pytest.fixture
def cohort(tmp_path, small_synth_config):
    return generate_cohort(small_synth_config, tmp_path / "data")


def _assert_same_windows(a, b):
    assert a.record_id == b.record_id
    assert a.ga_weeks == pytest.approx(b.ga_weeks)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_allclose(a.windows, b.windows, rtol=1e-6, atol=1e-3)


def test_cached_batches_match_fresh_preparation(tmp_path, cohort, mocker):
    cache = tmp_path / "cache"
    fresh = prepare_split(cohort, ["train"], stride_s=4.0)
    first = prepare_split(cohort, ["train"], stride_s=4.0, cache_dir=cache)
    assert len(list(cache.iterdir())) == len(first)

    rebuild = mocker.patch("preterm_sda.core.dataset.preprocess")
    second = prepare_split(cohort, ["train"], stride_s=4.0, cache_dir=cache)
    rebuild.assert_not_called()
    for a, b, c in zip(fresh, first, second, strict=True):
        _assert_same_windows(a.batch, b.batch)
        _assert_same_windows(a.batch, c.batch)
        assert c.duration_s == pytest.approx(a.duration_s)


def test_changed_record_is_not_served_from_cache(tmp_path, small_synth_config):
    data = tmp_path / "data"
    cache = tmp_path / "cache"
    old = generate_cohort(small_synth_config, data)
    entry = old.by_split("train")[0]
    stale = prepare_entry(old, entry, stride_s=4.0, cache_dir=cache)
    old_fingerprint = content_fingerprint(old, entry)

    # Same file names, different content.
    new = generate_cohort(small_synth_config.model_copy(update={"seed": 99}), data)
    new_entry = next(e for e in new.entries if e.record == entry.record)
    assert content_fingerprint(new, new_entry) != old_fingerprint

    rebuilt = prepare_entry(new, new_entry, stride_s=4.0, cache_dir=cache)
    expected = prepare_entry(new, new_entry, stride_s=4.0)
    _assert_same_windows(rebuilt.batch, expected.batch)
    assert not np.allclose(rebuilt.batch.windows, stale.batch.windows)
    assert len(list(cache.iterdir())) == 2


def test_changed_annotations_change_the_fingerprint(cohort):
    entry = cohort.by_split("train")[0]
    before = content_fingerprint(cohort, entry)
    path = cohort.resolve(entry.annotations)
    path.write_text(path.read_text() + "\n")
    assert content_fingerprint(cohort, entry) != before


def test_missing_files_are_reported(tmp_path, cohort):
    entry = cohort.by_split("train")[0]
    cohort.resolve(entry.record).unlink()
    with pytest.raises(ManifestError, match="does not exist"):
        prepare_entry(cohort, entry, cache_dir=tmp_path / "cache")


def test_unknown_split_is_rejected(cohort):
    with pytest.raises(ManifestError):
        prepare_split(cohort, ["nonexistent"])
