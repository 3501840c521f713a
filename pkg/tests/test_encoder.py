"""Tests for the patch transformer encoder."""

import numpy as np
import pytest

from vega_align.config import EncoderConfig
from vega_align.encoder import (
    count_parameters,
    encode,
    extract_student_tokens,
    extract_teacher_tokens,
    init_encoder,
    parameter_shapes,
    patchify,
)
from vega_align.errors import ShapeError
from vega_align.tensor import Tape, sum_


@pytest.fixture
def images(np_rng, tiny_encoder_config):
    c = tiny_encoder_config
    return np_rng.uniform(size=(3, c.channels, c.image_size, c.image_size))


class TestEncode:
    def test_one_map_per_block(self, student, images, tiny_encoder_config):
        blocks = encode(images[0], student)
        assert len(blocks) == tiny_encoder_config.num_blocks
        for i, b in enumerate(blocks):
            assert b.block_index == i
            assert b.tokens.shape == (tiny_encoder_config.num_tokens, tiny_encoder_config.embed_dim)

    def test_batched_shape(self, student, images, tiny_encoder_config):
        blocks = encode(images, student)
        assert blocks[-1].tokens.shape == (3, 4, tiny_encoder_config.embed_dim)

    def test_batch_matches_single(self, student, images):
        batched = encode(images, student)[-1].tokens.values
        for i in range(len(images)):
            single = encode(images[i], student)[-1].tokens.values
            np.testing.assert_allclose(batched[i], single, rtol=1e-12, atol=1e-12)

    def test_final_block_is_layer_normed(self, student, images):
        out = encode(images, student)[-1].tokens.values
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)

    def test_wrong_image_shape(self, student):
        with pytest.raises(ShapeError, match="expected image shape"):
            encode(np.zeros((3, 16, 16)), student)

    def test_source_image_label_carried(self, student, images):
        blocks = encode(images[0], student, source_image="scene0_cam1")
        assert all(b.source_image == "scene0_cam1" for b in blocks)


class TestExtraction:
    def test_student_reads_second_to_last(self, student, images):
        blocks = encode(images[0], student)
        assert extract_student_tokens(blocks) is blocks[-2]
        assert extract_teacher_tokens(blocks) is blocks[-1]

    def test_student_needs_two_blocks(self, np_rng):
        cfg = EncoderConfig(image_size=8, patch_size=4, embed_dim=8, num_blocks=1, num_heads=2)
        blocks = encode(np_rng.uniform(size=(3, 8, 8)), init_encoder(cfg))
        with pytest.raises(ShapeError):
            extract_student_tokens(blocks)
        assert extract_teacher_tokens(blocks) is blocks[0]

    def test_teacher_needs_one_block(self):
        with pytest.raises(ShapeError):
            extract_teacher_tokens([])


class TestParameters:
    def test_count_matches_closed_form(self, tiny_encoder_config):
        params = init_encoder(tiny_encoder_config)
        assert params.num_parameters() == count_parameters(tiny_encoder_config)

    def test_canonical_order(self, tiny_encoder_config):
        names = list(init_encoder(tiny_encoder_config).tensors)
        assert names == list(parameter_shapes(tiny_encoder_config))
        assert names[0] == "patch_embed.weight"
        assert names[-1] == "final_norm.bias"

    def test_init_deterministic(self, tiny_encoder_config):
        a = init_encoder(tiny_encoder_config, seed=5)
        b = init_encoder(tiny_encoder_config, seed=5)
        c = init_encoder(tiny_encoder_config, seed=6)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_gains_one_biases_zero(self, student):
        np.testing.assert_array_equal(student["blocks.0.ln1.gain"].values, 1.0)
        np.testing.assert_array_equal(student["blocks.0.attn.bq"].values, 0.0)

    def test_frozen_encoder_gets_no_gradient(self, student, images):
        frozen = student.copy(frozen=True)
        with Tape() as tape:
            loss = sum_(encode(images, frozen)[-1].tokens)
        assert len(tape) == 0
        assert all(t.grad is None for _, t in frozen)
        assert loss.shape == ()

    def test_copy_is_independent(self, student):
        clone = student.copy()
        clone["pos_embed"].values[0, 0] += 1.0
        assert clone.digest() != student.digest()


class TestPatchify:
    def test_row_major_patches(self, tiny_encoder_config):
        c = tiny_encoder_config
        image = np.zeros((1, 3, 8, 8))
        image[0, 0] = np.arange(64).reshape(8, 8)
        patches = patchify(image, c)
        assert patches.shape == (1, 4, 48)
        assert patches[0, 0, 0] == 0.0
        assert patches[0, 1, 0] == 4.0  # patch (row 0, col 1) starts at pixel (0, 4)
        assert patches[0, 2, 0] == 32.0  # patch (row 1, col 0) starts at pixel (4, 0)
