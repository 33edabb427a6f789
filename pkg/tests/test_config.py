"""Tests for the run configuration and the error hierarchy."""

import json

import pytest

from facedub.config import ABLATIONS, LOWER_HALF_INDICES, NUM_LANDMARKS, UPPER_HALF_INDICES, TrainConfig
from facedub.errors import (
    FaceDubError,
    FormatError,
    InvalidParameter,
    LengthMismatch,
    NumericalError,
    TrainingDivergence,
    ValidationError,
)


class TestTrainConfig:
    """Test TrainConfig validation, presets and serialization."""

    def test_defaults(self):
        """Default loss weights, optimizer settings and sizes."""
        config = TrainConfig()
        assert config.lambda_p == 10.0
        assert config.lambda_sync == 0.1
        assert config.adam_betas == (0.5, 0.999)
        assert (config.height, config.width) == (128, 96)
        assert config.feature_channels == 80
        assert config.ablation == "full"

    def test_presets(self):
        """The tiny and full-resolution presets set their sizes."""
        tiny = TrainConfig.tiny()
        assert (tiny.height, tiny.width, tiny.embedding_dim) == (64, 48, 64)
        full = TrainConfig.full_resolution(seed=3)
        assert (full.height, full.width, full.seed) == (416, 320, 3)

    @pytest.mark.parametrize(
        "changes",
        [
            {"height": 62},
            {"width": 0},
            {"lambda_p": -1.0},
            {"lambda_sync": -0.1},
            {"audio_window": 8},
            {"num_refs": 0},
            {"embedding_dim": 66, "attention_heads": 4},
            {"no_spade": True, "no_cm": True},
        ],
    )
    def test_invalid_values(self, changes):
        """Each violated invariant raises InvalidParameter."""
        with pytest.raises(InvalidParameter):
            TrainConfig(**changes)

    def test_ablation_name(self):
        """The active ablation flag names the condition."""
        for name in ABLATIONS:
            assert TrainConfig(**{name: True}).ablation == name

    def test_json_round_trip(self, temp_directory):
        """A config written to JSON loads back equal."""
        config = TrainConfig.tiny(seed=7, no_cm=True)
        path = temp_directory / "config.json"
        config.to_json(path)
        assert TrainConfig.from_json(path) == config

    def test_unknown_keys_rejected(self, temp_directory):
        """Unknown configuration keys raise InvalidParameter."""
        path = temp_directory / "config.json"
        path.write_text(json.dumps({"seed": 1, "learning_rate": 0.1}))
        with pytest.raises(InvalidParameter, match="learning_rate"):
            TrainConfig.from_json(path)

    def test_invalid_json(self, temp_directory):
        """A malformed document raises InvalidParameter."""
        path = temp_directory / "config.json"
        path.write_text("{seed: 1")
        with pytest.raises(InvalidParameter):
            TrainConfig.from_json(path)

    def test_hash_ignores_paths(self):
        """Data and output paths do not change the config hash; other fields do."""
        base = TrainConfig.tiny()
        assert base.config_hash() == base.replace(data_dir="/data", out_dir="/out").config_hash()
        assert base.config_hash() != base.replace(seed=1).config_hash()


class TestLandmarkLayout:
    """Test the frozen landmark index constants."""

    def test_halves_partition_the_layout(self):
        """Lower and upper halves split the 468 indices."""
        assert len(LOWER_HALF_INDICES) + len(UPPER_HALF_INDICES) == NUM_LANDMARKS
        assert set(LOWER_HALF_INDICES).isdisjoint(UPPER_HALF_INDICES)


class TestErrorHierarchy:
    """Test error classes and their exit codes."""

    def test_exit_codes(self):
        """Validation errors map to 2, numerical errors to 3."""
        assert InvalidParameter("x").exit_code == 2
        assert FormatError("x").exit_code == 2
        assert LengthMismatch("x").exit_code == 2
        assert NumericalError("x").exit_code == 3
        assert TrainingDivergence("x").exit_code == 3

    def test_base_classes(self):
        """Every error is a FaceDubError and a RuntimeError."""
        for cls in (InvalidParameter, FormatError, NumericalError, TrainingDivergence):
            assert issubclass(cls, FaceDubError)
            assert issubclass(cls, RuntimeError)
        assert issubclass(InvalidParameter, ValidationError)
        assert issubclass(InvalidParameter, ValueError)

    def test_divergence_carries_context(self):
        """TrainingDivergence keeps the accuracy and checkpoint path."""
        error = TrainingDivergence("low", accuracy=0.5, checkpoint_path="a.ckpt")
        assert error.accuracy == 0.5
        assert error.checkpoint_path == "a.ckpt"
