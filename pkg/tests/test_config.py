"""Tests for the pydantic configuration models."""

import json

import pytest
from pydantic import ValidationError

from vega_align.config import (
    DATA_FRACTIONS,
    EncoderConfig,
    StudentInit,
    TrainConfig,
)


class TestEncoderConfig:
    def test_defaults(self):
        config = EncoderConfig()
        assert (config.grid, config.num_tokens) == (4, 16)
        assert config.patch_dim == 3 * 8 * 8
        assert config.head_dim == 8 and config.mlp_dim == 128

    def test_patch_must_divide_image(self):
        with pytest.raises(ValidationError, match="not divisible by patch_size"):
            EncoderConfig(image_size=30, patch_size=8)

    def test_heads_must_divide_width(self):
        with pytest.raises(ValidationError, match="not divisible by num_heads"):
            EncoderConfig(embed_dim=30, num_heads=4)

    def test_frozen(self):
        config = EncoderConfig()
        with pytest.raises(ValidationError):
            config.embed_dim = 64

    def test_negative_seed_rejected(self):
        with pytest.raises(ValidationError, match="greater than or equal to 0"):
            EncoderConfig(seed=-1)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.steps == 2000 and config.decay_step == 1000
        assert config.align_lambda == 0.1 and config.alignment_enabled
        assert config.student_init is StudentInit.PLAIN
        assert config.alignment.align_lambda == 0.1

    def test_decay_after_last_step(self):
        with pytest.raises(ValidationError, match="exceeds steps"):
            TrainConfig(steps=10, decay_step=11)

    @pytest.mark.parametrize("fraction", DATA_FRACTIONS)
    def test_allowed_fractions(self, fraction):
        assert TrainConfig(data_fraction=fraction).data_fraction == fraction

    def test_other_fraction_rejected(self):
        with pytest.raises(ValidationError, match="data_fraction"):
            TrainConfig(data_fraction=0.3)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(align_lambda=-0.1)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(lambda_align=0.1)

    def test_validation_error_is_a_value_error(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=0)

    def test_from_json_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({
            "steps": 20,
            "decay_step": 10,
            "student_init": "teacher",
            "encoder": {"image_size": 16, "patch_size": 4, "embed_dim": 8, "num_heads": 2},
            "data": {"train_scenes": 4},
        }))
        config = TrainConfig.from_json_file(path)
        assert config.student_init is StudentInit.TEACHER
        assert config.encoder.num_tokens == 16
        assert config.data.train_scenes == 4 and config.data.eval_scenes == 128

    def test_json_round_trip(self, tiny_train_config):
        back = TrainConfig.model_validate_json(tiny_train_config.model_dump_json())
        assert back == tiny_train_config
