"""Tests for the projector and the joint objective."""

import numpy as np
import pytest

from vega_align.alignment import (
    action_loss,
    align_loss,
    init_projector,
    project,
    projector_parameter_count,
    vega_loss,
)
from vega_align.config import AlignmentConfig
from vega_align.encoder import PatchTokenMap
from vega_align.errors import AlignmentError, ShapeError
from vega_align.tensor import Tape, Tensor, finite_difference_check, mul, sum_


class TestProjector:
    def test_shape_preserved(self, np_rng):
        p = init_projector(8, seed=0)
        tokens = Tensor(np_rng.normal(size=(2, 4, 8)))
        assert project(tokens, p).shape == (2, 4, 8)

    def test_accepts_token_map(self, np_rng):
        p = init_projector(8, seed=0)
        tokens = Tensor(np_rng.normal(size=(4, 8)))
        np.testing.assert_array_equal(
            project(PatchTokenMap(tokens, 0), p).values, project(tokens, p).values
        )

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError, match="does not match projector"):
            project(Tensor(np.ones((4, 6))), init_projector(8, seed=0))

    def test_parameter_count(self):
        p = init_projector(8, seed=0)
        assert p.num_parameters() == projector_parameter_count(8) == 2 * 64 + 32
        assert projector_parameter_count(1024) == 2_101_248

    def test_tokens_are_independent(self, np_rng):
        p = init_projector(8, seed=1)
        tokens = np_rng.normal(size=(3, 8))
        full = project(Tensor(tokens), p).values
        single = project(Tensor(tokens[1:2]), p).values
        np.testing.assert_allclose(full[1:2], single, rtol=1e-12)

    def test_seeded_init(self):
        assert init_projector(8, seed=3).digest() == init_projector(8, seed=3).digest()
        assert init_projector(8, seed=3).digest() != init_projector(8, seed=4).digest()


class TestAlignLoss:
    def test_identical_rows_give_zero(self, np_rng):
        t = np_rng.normal(size=(4, 8))
        assert abs(align_loss(Tensor(t), t).item()) <= 1e-12

    def test_scale_invariant(self, np_rng):
        t = np_rng.normal(size=(4, 8))
        assert abs(align_loss(Tensor(3.0 * t), t).item()) <= 1e-12

    def test_opposite_rows_give_two(self, np_rng):
        t = np_rng.normal(size=(4, 8))
        assert align_loss(Tensor(-t), t).item() == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_rows_give_one(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 5.0], [2.0, 0.0]])
        assert align_loss(Tensor(a), b).item() == pytest.approx(1.0, abs=1e-12)

    def test_bounded(self, np_rng):
        for _ in range(5):
            a, b = np_rng.normal(size=(2, 6, 8))
            value = align_loss(Tensor(a), b).item()
            assert 0.0 <= value <= 2.0

    def test_zero_teacher_row_names_index(self, np_rng):
        t = np_rng.normal(size=(4, 8))
        t[2] = 0.0
        with pytest.raises(AlignmentError, match="teacher row 2"):
            align_loss(Tensor(np_rng.normal(size=(4, 8))), t)

    def test_zero_projected_row(self, np_rng):
        a = np_rng.normal(size=(4, 8))
        a[0] = 0.0
        with pytest.raises(AlignmentError, match="projected row 0"):
            align_loss(Tensor(a), np_rng.normal(size=(4, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            align_loss(Tensor(np.ones((4, 8))), np.ones((5, 8)))

    def test_teacher_receives_no_gradient(self, np_rng):
        student = Tensor(np_rng.normal(size=(4, 8)), requires_grad=True)
        teacher = Tensor(np_rng.normal(size=(4, 8)))
        with Tape() as tape:
            loss = align_loss(student, teacher)
        tape.backward(loss)
        assert student.grad is not None
        assert teacher.grad is None

    def test_gradient_matches_finite_difference(self, np_rng):
        teacher = np_rng.normal(size=(3, 5))
        x = Tensor(np_rng.normal(size=(3, 5)))
        assert finite_difference_check(lambda t: align_loss(t, teacher), x) < 1e-5


class TestActionLoss:
    def test_mean_squared_error(self):
        pred = Tensor(np.array([[0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 1.0]]))
        gt = np.zeros((2, 4))
        assert action_loss(pred, gt).item() == pytest.approx(5.0 / 8.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            action_loss(Tensor(np.zeros((2, 4))), np.zeros((2, 3)))


class TestVegaLoss:
    def test_weighted_sum(self):
        cfg = AlignmentConfig(align_lambda=0.5)
        assert vega_loss(1.0, 0.4, cfg).item() == pytest.approx(1.2)

    def test_lambda_zero_equals_action(self):
        cfg = AlignmentConfig(align_lambda=0.0)
        assert vega_loss(0.7, 1.9, cfg).item() == 0.7

    def test_disabled_returns_action_tensor(self):
        a = Tensor(np.array(0.3))
        out = vega_loss(a, 100.0, AlignmentConfig(align_lambda=1.0, enabled=False))
        assert out is a

    def test_negative_lambda_rejected(self):
        cfg = AlignmentConfig.model_construct(align_lambda=-0.1, enabled=True)
        with pytest.raises(ValueError, match="non-negative"):
            vega_loss(1.0, 1.0, cfg)

    def test_config_rejects_negative_lambda(self):
        with pytest.raises(ValueError):
            AlignmentConfig(align_lambda=-1.0)

    def test_lambda_zero_blocks_alignment_gradient(self, np_rng):
        x = Tensor(np_rng.normal(size=(4, 8)), requires_grad=True)
        teacher = np_rng.normal(size=(4, 8))
        cfg = AlignmentConfig(align_lambda=0.0)
        with Tape() as tape:
            loss = vega_loss(sum_(mul(x, 0.0)), align_loss(x, teacher), cfg)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, 0.0)
