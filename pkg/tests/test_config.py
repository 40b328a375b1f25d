"""
Test cases for run configuration, seeding and config resolution
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.config import RunConfig, reference_config, small_config
from core.exceptions import ConfigError, NumericError, SchemaError
from core.seeding import SeedStreams, stable_hash
from pipeline.config import parse_override, resolve_config, save_config


class TestRunConfig:
    """Test the pydantic run configuration"""

    def test_defaults(self):
        config = RunConfig()
        assert config.model.d == 64
        assert config.tune.lambda_ == pytest.approx(0.01)
        assert config.eval.ks == [10, 20]

    def test_unknown_field_rejected(self):
        with pytest.raises(Exception):
            RunConfig.model_validate({"model": {"depth": 3}})

    def test_no_denoise_keeps_the_backbone(self):
        """Bypassing filters is a tuning setting; the pretrained backbone is the same"""
        base = RunConfig()
        config = RunConfig.model_validate({"tune": {"no_denoise": True}})
        assert config.model.filter_mode == "efl"
        assert config.backbone_fingerprint() == base.backbone_fingerprint()
        assert config.tuning_fingerprint() != base.tuning_fingerprint()

    def test_fingerprint_ignores_paths_and_logging(self):
        base = RunConfig()
        moved = RunConfig.model_validate({"paths": {"runs_dir": "elsewhere"}, "logging": {"level": "DEBUG"}})
        assert base.fingerprint() == moved.fingerprint()

    def test_fingerprint_scopes(self):
        """Tuning settings leave the backbone fingerprint alone; eval settings leave the tuning one"""
        base = RunConfig()
        tuned = RunConfig.model_validate({"tune": {"lambda": 0.1}})
        evaluated = RunConfig.model_validate({"eval": {"n_neg": 50}})
        assert tuned.fingerprint() != base.fingerprint()
        assert tuned.backbone_fingerprint() == base.backbone_fingerprint()
        assert tuned.tuning_fingerprint() != base.tuning_fingerprint()
        assert evaluated.tuning_fingerprint() == base.tuning_fingerprint()
        assert evaluated.fingerprint() != base.fingerprint()

    def test_named_configs(self):
        assert reference_config().model.d == 128
        assert reference_config().prompt.n_factors == 8
        assert small_config().model.d == 8


class TestSeeding:
    """Test named seed substreams"""

    def test_streams_are_reproducible(self):
        a = SeedStreams(7).numpy("negatives").integers(0, 1000, 5)
        b = SeedStreams(7).numpy("negatives").integers(0, 1000, 5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent(self):
        streams = SeedStreams(7)
        assert streams.torch_seed("init") != streams.torch_seed("negatives")
        assert SeedStreams(7).torch_seed("init") != SeedStreams(8).torch_seed("init")

    def test_stable_hash_is_key_order_free(self):
        assert stable_hash({"a": 1, "b": 2}) == stable_hash({"b": 2, "a": 1})
        assert len(stable_hash([1, 2])) == 64


class TestErrors:
    """Test error payloads used by the CLI"""

    def test_exit_codes(self):
        assert SchemaError("bad").exit_code == 1
        assert NumericError("nan", coordinate="w(0,)").exit_code == 2

    def test_config_error_suggestion(self):
        error = ConfigError("unknown key", key_path="tune.lamda", suggestion="lambda")
        payload = error.to_dict()
        assert payload["suggestion"] == "lambda"
        assert "did you mean 'lambda'" in payload["error"]


class TestResolveConfig:
    """Test file and override precedence"""

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert resolve_config(str(path)).fingerprint() == RunConfig().fingerprint()

    def test_flag_beats_file(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("tune:\n  lambda: 0.1\n")
        assert resolve_config(str(path)).tune.lambda_ == pytest.approx(0.1)
        config = resolve_config(str(path), ["tune.lambda=0.01"])
        assert config.tune.lambda_ == pytest.approx(0.01)

    def test_dedicated_values_beat_overrides(self):
        config = resolve_config(None, ["eval.n_neg=50"], {"eval.n_neg": 20, "eval.seed": None})
        assert config.eval.n_neg == 20
        assert config.eval.seed is None

    def test_misspelled_key_suggests(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("tune:\n  lamda: 0.1\n")
        with pytest.raises(ConfigError) as info:
            resolve_config(str(path))
        assert info.value.key_path == "tune.lamda"
        assert info.value.suggestion == "lambda"

    def test_misspelled_section(self):
        with pytest.raises(ConfigError) as info:
            resolve_config(None, ["modle.d=32"])
        assert info.value.suggestion == "model"

    def test_type_mismatch_names_key_path(self):
        with pytest.raises(ConfigError) as info:
            resolve_config(None, ["model.d=wide"])
        assert info.value.key_path == "model.d"

    def test_override_values_are_yaml_scalars(self):
        assert parse_override("eval.ks=[5, 10]") == (["eval", "ks"], [5, 10])
        assert parse_override("tune.no_denoise=true") == (["tune", "no_denoise"], True)
        with pytest.raises(ConfigError):
            parse_override("no-equals-sign")

    def test_saved_config_round_trips(self, tmp_path):
        config = resolve_config(None, ["tune.lambda=0.1", "model.k=2"])
        path = save_config(config, str(tmp_path / "run" / "config.yaml"))
        assert resolve_config(path).fingerprint() == config.fingerprint()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            resolve_config(str(tmp_path / "absent.yaml"))
