"""Synthesize, train, evaluate and fuse through the command line on a desk-sized cohort."""

import csv
import json

import pytest
from click.testing import CliRunner

from preterm_sda.cli import cli

pytestmark = [pytest.mark.slow, pytest.mark.integration]

COHORT = [
    "$.synth.n_infants=6",
    "$.synth.record_minutes=2",
    "$.synth.seizure_rate_per_hour=60",
    "$.synth.n_test_infants=2",
    "$.synth.n_val_infants=1",
    "$.synth.n_control_infants=1",
]

FAST_TRAINING = [
    "$.train.architecture=tiny",
    "$.train.max_epochs=2",
    "$.train.patience_epochs=2",
    "$.train.batch_size=16",
    "$.train.val_records=1",
    "$.infer.stride_s=4",
    "$.infer.smooth_width=3",
]


def _invoke(*args):
    result = CliRunner().invoke(cli, ["--quiet", *args], obj={})
    assert result.exit_code == 0, result.output
    return json.loads(result.stdout)


def _sets(assignments):
    return [arg for assignment in assignments for arg in ("--set", assignment)]


def test_full_pipeline(tmp_path):
    data = tmp_path / "data"
    synth = _invoke("synth", "--output-dir", str(data), "--seed", "7", *_sets(COHORT))
    manifest = synth["manifest"]
    assert synth["records_by_split"] == {"test": 2, "train": 3, "val": 1}

    assert _invoke("validate", "--manifest", manifest, "--require-split", "test")["status"] == "ok"

    common = ["--manifest", manifest, "--seed", "1", *_sets(FAST_TRAINING)]
    base = _invoke("train", "--output-dir", str(tmp_path / "base"), "--mode", "base", "--stride-s", "4", *common)
    ensemble = _invoke("train", "--output-dir", str(tmp_path / "ens"), "--mode", "ensemble", "--stride-s", "4", *common)
    assert len(ensemble["val_aucs"]) == 3
    assert len({tuple(ids) for ids in ensemble["val_record_ids"]}) == 3

    report = _invoke(
        "eval",
        "--output-dir",
        str(tmp_path / "ens"),
        "--model",
        ensemble["model"],
        "--operating-point",
        "fdh=10",
        *common,
    )
    assert 0.0 <= report["auc"] <= 1.0
    assert report["n_records"] == 2
    assert set(report["auc_by_group"]) >= {"overall"}
    eval_dir = tmp_path / "ens" / "eval"
    assert json.loads((eval_dir / "report.json").read_text())["auc"] == report["auc"]
    with open(eval_dir / "detection_curve.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 202
    assert len(list((eval_dir / "traces").glob("*.csv"))) == 2

    fused = _invoke(
        "fuse",
        "--output-dir",
        str(tmp_path / "fuse"),
        "--classifier",
        base["model"],
        "--classifier",
        ensemble["model"],
        *common,
    )
    assert fused["fusion"]["method"] in ("arithmetic", "geometric")
    assert sum(fused["fusion"]["alphas"]) == pytest.approx(1.0)
    assert fused["fusion_val_auc"] >= max(fused["classifier_val_aucs"]) - 1e-12
    with open(tmp_path / "fuse" / "fuse" / "fusion_sweep.csv", newline="") as f:
        assert len(list(csv.DictReader(f))) == 42


def _snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_rerun_with_same_config_is_byte_identical(tmp_path):
    data = tmp_path / "data"
    manifest = _invoke("synth", "--output-dir", str(data), "--seed", "3", *_sets(COHORT))["manifest"]
    runs = tmp_path / "runs"
    common = ["--manifest", manifest, "--seed", "2", *_sets(FAST_TRAINING)]

    def run_all():
        base = _invoke("train", "--output-dir", str(runs / "base"), "--mode", "base", "--stride-s", "4", *common)
        ens = _invoke("train", "--output-dir", str(runs / "ens"), "--mode", "ensemble", "--stride-s", "4", *common)
        _invoke("eval", "--output-dir", str(runs / "ens"), "--model", ens["model"], *common)
        _invoke(
            "fuse",
            "--output-dir",
            str(runs / "fuse"),
            "--classifier",
            base["model"],
            "--classifier",
            ens["model"],
            *common,
        )
        return _snapshot(runs)

    first = run_all()
    assert any(path.suffix == ".json" for path in first)
    second = run_all()
    assert second.keys() == first.keys()
    for path, content in first.items():
        assert second[path] == content, path
