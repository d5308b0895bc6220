"""Flat config: defaults, round trips, override and rejection semantics."""

import pytest

from ssia.config import ConfigError, ExperimentConfig


class TestDefaults:
    def test_training_recipe_defaults(self):
        cfg = ExperimentConfig()
        assert cfg["train.lr0"] == 0.1
        assert cfg["train.momentum"] == 0.9
        assert cfg["train.weight_decay"] == 4e-5
        assert cfg["train.batch_size"] == 32
        assert cfg["train.epochs"] == 100

    def test_block_defaults(self):
        cfg = ExperimentConfig()
        assert cfg["ssia.eta"] == 0.5
        assert cfg["ssia.hidden_width"] == 64
        assert cfg["ssia.lambda_s"] == 1.0
        assert cfg["ssia.lambda_c"] == 3.0
        assert cfg["ssia.upper_bound"] == 10.0
        assert cfg["ssia.scheme"] == "cascaded"

    def test_aggregation_defaults(self):
        cfg = ExperimentConfig()
        assert cfg["loss.lambda_task"] == 1.0
        assert cfg["loss.lambda_sb"] == 0.2
        assert cfg["loss.per_block"] == [1.0, 2.0, 3.0]


class TestRoundTrip:
    def test_canonical_is_fixed_point(self):
        cfg = ExperimentConfig.parse("train.seed = 7\nssia.eta=0.25\n")
        once = cfg.canonical()
        again = ExperimentConfig.parse(once).canonical()
        assert once == again

    def test_comments_and_blanks_ignored(self):
        cfg = ExperimentConfig.parse("# header\n\ntrain.seed = 3 # trailing\n")
        assert cfg["train.seed"] == 3

    def test_digest_tracks_values(self):
        a = ExperimentConfig()
        b = ExperimentConfig.parse("train.seed = 1")
        assert a.digest() != b.digest()
        assert a.digest() == ExperimentConfig().digest()


class TestValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key 'train.lr'"):
            ExperimentConfig.parse("train.lr = 0.1")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="train.seed"):
            ExperimentConfig.parse("train.seed = banana")

    def test_bad_enum_lists_options(self):
        with pytest.raises(ConfigError, match="cascaded"):
            ExperimentConfig.parse("ssia.scheme = diagonal")

    def test_override_application_order(self):
        cfg = ExperimentConfig.parse("train.seed = 1")
        cfg.apply_overrides(["train.seed=7", "ssia.enabled=false"])
        assert cfg["train.seed"] == 7
        assert cfg["ssia.enabled"] is False

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError, match="key=value"):
            ExperimentConfig().apply_overrides(["train.seed"])

    def test_list_values_roundtrip(self):
        cfg = ExperimentConfig.parse("loss.per_block = 0.5,1.5,2.5")
        assert cfg["loss.per_block"] == [0.5, 1.5, 2.5]
        assert "loss.per_block = 0.5,1.5,2.5" in cfg.canonical()
