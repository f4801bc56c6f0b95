import pytest

from preterm_sda.core.errors import ConfigError
from preterm_sda.main import setup_environment
from preterm_sda.utils.config import ExperimentConfig, ServiceConfig, config_hash, load_experiment_config
from preterm_sda.utils.overrides import apply_overrides


class TestOverrides:
    def test_creates_missing_sections(self):
        result = apply_overrides({}, ["$.train.lr=0.02", "infer.smooth_width=9"])
        assert result == {"train": {"lr": 0.02}, "infer": {"smooth_width": 9}}

    def test_replaces_existing_values_without_mutating_input(self):
        data = {"train": {"lr": 0.01, "seed": 1}}
        result = apply_overrides(data, ["$.train.seed=7", '$.paths.classifiers=["a.json", "b.json"]'])
        assert result["train"] == {"lr": 0.01, "seed": 7}
        assert result["paths"]["classifiers"] == ["a.json", "b.json"]
        assert data == {"train": {"lr": 0.01, "seed": 1}}

    def test_non_json_value_is_kept_as_string(self):
        assert apply_overrides({}, ["$.paths.manifest=data/manifest.json"]) == {
            "paths": {"manifest": "data/manifest.json"}
        }

    @pytest.mark.parametrize("assignment", ["$.train.lr", "=3", "$.train[=1"])
    def test_malformed_assignments(self, assignment):
        with pytest.raises(ConfigError):
            apply_overrides({}, [assignment])

    def test_cannot_add_key_under_scalar(self):
        with pytest.raises(ConfigError, match="non-object"):
            apply_overrides({"mode": "base"}, ["$.mode.extra=1"])


class TestExperimentConfig:
    def test_defaults(self):
        config = load_experiment_config()
        assert config == ExperimentConfig()
        assert config.train.lr == 0.01
        assert config.train.patience_epochs == 8
        assert config.fusion.grid_step == 0.05
        assert config.eval.operating_fdh == 0.25

    def test_file_then_assignments_then_flags(self, tmp_path):
        path = tmp_path / "experiment.yaml"
        path.write_text("train:\n  lr: 0.05\n  seed: 2\nmode: base\n")
        config = load_experiment_config(
            path,
            assignments=["$.train.seed=3", "$.train.max_epochs=4"],
            flag_values={"$.train.max_epochs": 6, "$.paths.model": None},
        )
        assert config.mode == "base"
        assert config.train.lr == 0.05
        assert config.train.seed == 3
        assert config.train.max_epochs == 6
        assert config.paths.model is None

    def test_json_config_file(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text('{"infer": {"stride_s": 4}}')
        assert load_experiment_config(path).infer.stride_s == 4.0

    @pytest.mark.parametrize(
        "assignment",
        ["$.train.lr=-1", "$.train.unknown=1", "$.infer.smooth_width=4", "$.mode=weird"],
    )
    def test_invalid_values_raise_config_error(self, assignment):
        with pytest.raises(ConfigError, match="Invalid configuration"):
            load_experiment_config(assignments=[assignment])

    def test_missing_or_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_experiment_config(tmp_path / "nope.yaml")
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="must contain an object"):
            load_experiment_config(path)

    def test_config_hash_tracks_content(self):
        base = ExperimentConfig()
        assert config_hash(base) == config_hash(ExperimentConfig())
        assert len(config_hash(base)) == 16
        changed = load_experiment_config(assignments=["$.train.seed=1"])
        assert config_hash(changed) != config_hash(base)


def test_service_config_reads_environment(monkeypatch):
    monkeypatch.setenv("SDA_THREADS", "4")
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    settings = ServiceConfig()
    assert settings.SDA_THREADS == 4
    assert settings.LOG_LEVEL == "DEBUG"


def test_setup_environment_takes_log_level_from_settings(monkeypatch, mocker):
    monkeypatch.setenv("LOG_LEVEL", "warning")
    mocker.patch("preterm_sda.main.load_dotenv")
    basic_config = mocker.patch("preterm_sda.main.logging.basicConfig")
    assert setup_environment()
    assert basic_config.call_args.kwargs["level"] == "WARNING"
