"""Tests for the training bundle and projector stripping."""

import numpy as np
import pytest

from vega_align.alignment import init_projector
from vega_align.model import VegaModel, action_path, strip_projector
from vega_align.policy_head import init_action_head


@pytest.fixture
def model(student, tiny_encoder_config):
    d = tiny_encoder_config.embed_dim
    return VegaModel(student, init_action_head(d, seed=1), init_projector(d, seed=2))


@pytest.fixture
def images(np_rng, tiny_encoder_config):
    c = tiny_encoder_config
    return np_rng.uniform(size=(4, c.channels, c.image_size, c.image_size))


class TestVegaModel:
    def test_forward_returns_actions_and_alignment_tokens(self, model, images):
        actions, tokens = model.forward(images)
        assert actions.shape == (4, 4)
        assert tokens.block_index == model.student.config.num_blocks - 2

    def test_parameter_sets_include_projector(self, model):
        names = [name for name, _ in model.parameter_sets()]
        assert names == ["student", "head", "projector"]
        total = sum(ps.num_parameters() for _, ps in model.parameter_sets())
        assert model.num_parameters() == total

    def test_frozen_student_excluded_from_trainable(self, model):
        before = len(model.trainable_parameters())
        model.student.freeze()
        after = len(model.trainable_parameters())
        assert before - after == len(model.student.parameters())

    def test_predict_matches_action_path(self, model, images):
        expected = action_path(images, model.student, model.head).values
        np.testing.assert_array_equal(model.predict(images), expected)


class TestStripProjector:
    def test_predictions_bitwise_equal(self, model, images):
        inference = strip_projector(model)
        np.testing.assert_array_equal(inference.predict(images), model.predict(images))

    def test_projector_weights_do_not_affect_actions(self, model, images):
        before = model.predict(images)
        model.projector["w1"].values[:] = 0.0
        np.testing.assert_array_equal(model.predict(images), before)

    def test_parameter_count_drops_by_projector(self, model):
        inference = strip_projector(model)
        assert inference.num_parameters() == (
            model.num_parameters() - model.projector.num_parameters()
        )

    def test_stripped_copy_is_frozen_and_detached(self, model, images):
        inference = strip_projector(model)
        assert inference.student.frozen and inference.head.frozen
        assert inference.student.digest() == model.student.digest()
        model.head["b2"].values[:] += 1.0
        assert not np.array_equal(inference.predict(images), model.predict(images))
