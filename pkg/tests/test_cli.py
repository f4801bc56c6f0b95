import json

import pytest
from click.testing import CliRunner

from preterm_sda.cli import cli, parse_operating_point
from preterm_sda.commands.base import CommandResult
from preterm_sda.core.errors import ConfigError


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def fake_executor(mocker):
    executor = mocker.MagicMock()
    executor.run.return_value = CommandResult(name="x", success=True, result={"status": "ok"})
    mocker.patch("preterm_sda.cli.get_command_executor", return_value=executor)
    return executor


def _invoke(runner, *args):
    return runner.invoke(cli, ["--quiet", *args], obj={})


@pytest.mark.parametrize("value, expected", [("fdh=0.25", 0.25), ("0.5", 0.5), ("FDH=1", 1.0), (None, None)])
def test_parse_operating_point(value, expected):
    assert parse_operating_point(value) == expected


@pytest.mark.parametrize("value", ["sens=0.9", "fdh=abc", "fdh=-1"])
def test_parse_operating_point_rejects_bad_values(value):
    with pytest.raises(ConfigError):
        parse_operating_point(value)


def test_help_lists_every_stage(runner):
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for name in ("synth", "train", "eval", "fuse", "validate"):
        assert name in result.output


def test_flags_override_config(runner, fake_executor, tmp_path):
    config_file = tmp_path / "c.yaml"
    config_file.write_text("train:\n  stride_s: 2\n  lr: 0.05\n")
    result = _invoke(
        runner,
        "train",
        "--config",
        str(config_file),
        "--seed",
        "5",
        "--stride-s",
        "4",
        "--mode",
        "ga_scratch",
        "--group",
        "3",
        "--set",
        "$.train.lr=0.02",
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout) == {"status": "ok"}

    call = fake_executor.run.call_args.args[0]
    assert call.name == "train"
    assert call.config.train.seed == 5
    assert call.config.synth.seed == 5
    assert call.config.train.stride_s == 4.0
    assert call.config.train.lr == 0.02
    assert call.config.mode == "ga_scratch"
    assert call.config.ga.group == 3


def test_eval_and_fuse_flags(runner, fake_executor):
    assert _invoke(runner, "eval", "--model", "m.json", "--loo", "--operating-point", "fdh=1", "--smooth-width", "9").exit_code == 0
    config = fake_executor.run.call_args.args[0].config
    assert config.paths.model == "m.json"
    assert config.eval.loo
    assert config.eval.operating_fdh == 1.0
    assert config.infer.smooth_width == 9

    assert _invoke(runner, "fuse", "--classifier", "a.json", "--classifier", "b.json").exit_code == 0
    assert fake_executor.run.call_args.args[0].config.paths.classifiers == ["a.json", "b.json"]


def test_validate_passes_required_splits(runner, fake_executor):
    _invoke(runner, "validate", "--manifest", "m.json", "--require-split", "train", "--require-split", "test")
    call = fake_executor.run.call_args.args[0]
    assert call.options == {"required_splits": ["train", "test"]}
    assert call.config.paths.manifest == "m.json"


def test_command_failure_prints_error_json(runner):
    result = _invoke(runner, "validate")
    assert result.exit_code == 1
    payload = json.loads(result.stdout)
    assert payload["status"] == "error"
    assert payload["error_type"] == "CommandError"
    assert "manifest" in payload["error"]


def test_ga_transfer_without_pretrained_fails(runner, tmp_path):
    result = _invoke(runner, "train", "--mode", "ga_transfer", "--group", "2", "--output-dir", str(tmp_path))
    assert result.exit_code == 1
    assert "--pretrained" in json.loads(result.stdout)["error"]


def test_invalid_configuration_is_reported(runner):
    result = _invoke(runner, "synth", "--set", "$.synth.n_infants=0")
    assert result.exit_code == 1
    assert json.loads(result.stdout)["error_type"] == "ConfigError"

    result = _invoke(runner, "eval", "--operating-point", "sens=0.9")
    assert result.exit_code == 1
    assert json.loads(result.stdout)["error_type"] == "ConfigError"


def test_group_out_of_range_is_a_usage_error(runner):
    result = _invoke(runner, "train", "--group", "4")
    assert result.exit_code == 2


def test_synth_end_to_end(runner, tmp_path):
    result = _invoke(
        runner,
        "synth",
        "--output-dir",
        str(tmp_path),
        "--seed",
        "3",
        "--set",
        "$.synth.n_infants=2",
        "--set",
        "$.synth.record_minutes=1",
        "--set",
        "$.synth.n_test_infants=1",
        "--set",
        "$.synth.n_val_infants=0",
        "--set",
        "$.synth.n_control_infants=0",
    )
    assert result.exit_code == 0, result.output
    output = json.loads(result.stdout)
    assert output["n_records"] == 2
    assert (tmp_path / "manifest.json").exists()
