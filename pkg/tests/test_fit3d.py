"""Tests for the voxel feature field, teacher fine-tuning and the consistency score."""

import numpy as np
import pytest

from vega_align.camera import CameraSpec
from vega_align.config import Fit3dConfig
from vega_align.dataset import SceneDataset
from vega_align.encoder import encode
from vega_align.errors import DatasetError
from vega_align.fit3d import (
    background_feature,
    build_feature_field,
    consistency_score,
    fit3d_finetune,
    mean_consistency,
    object_code,
    position_code,
    render_feature_map,
)
from vega_align.scenes import TARGET_COLOR, SceneSpec, cameras_for_scene, generate_scene
from vega_align.tensor import no_grad


@pytest.fixture
def centred_scene():
    scene = SceneSpec(grid_size=16)
    scene.add_box((7, 7, 7), (2, 2, 2), TARGET_COLOR, 0)
    return scene


class TestFeatureField:
    def test_position_code_is_unit_and_seeded(self, np_rng):
        centers = np_rng.uniform(0, 16, size=(5, 3))
        a = position_code(centers, 8, seed=1)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
        np.testing.assert_array_equal(a, position_code(centers, 8, seed=1))
        assert not np.allclose(a, position_code(centers, 8, seed=2))

    def test_odd_dimension(self, np_rng):
        code = position_code(np_rng.uniform(size=(3, 3)), 7, seed=0)
        assert code.shape == (3, 7)

    def test_object_codes_differ(self):
        assert not np.allclose(object_code(0, 8, seed=0), object_code(1, 8, seed=0))

    def test_occupied_voxels_get_unit_features(self):
        scene = generate_scene(2, "hard")
        field = build_feature_field(scene, seed=5, dim=8)
        norms = np.linalg.norm(field.features, axis=-1)
        np.testing.assert_allclose(norms[scene.occupancy], 1.0)
        assert np.all(norms[~scene.occupancy] == 0.0)

    def test_feature_depends_only_on_voxel(self):
        a = SceneSpec(grid_size=16)
        a.add_box((4, 4, 4), (2, 2, 2), TARGET_COLOR, 0)
        b = SceneSpec(grid_size=16)
        b.add_box((4, 4, 4), (2, 2, 2), TARGET_COLOR, 0)
        b.add_box((10, 10, 10), (1, 1, 1), (0.1, 0.7, 0.2), 1)
        fa, fb = build_feature_field(a, 5, 8), build_feature_field(b, 5, 8)
        np.testing.assert_array_equal(fa.feature_at((4, 5, 4)), fb.feature_at((4, 5, 4)))


class TestRenderFeatureMap:
    def test_empty_scene_is_background(self):
        scene = SceneSpec(grid_size=16)
        camera = cameras_for_scene(scene, 7.0, 8)[0]
        rendered = render_feature_map(build_feature_field(scene, 0, 8), camera, 2)
        assert rendered.num_patches == 4
        assert not rendered.hit_mask.any()
        np.testing.assert_array_equal(rendered.features, np.tile(background_feature(8), (4, 1)))

    def test_hit_patches_are_convex_combinations(self, centred_scene):
        camera = cameras_for_scene(centred_scene, 28.0, 32)[0]
        rendered = render_feature_map(build_feature_field(centred_scene, 0, 8), camera, 4)
        assert rendered.hit_mask.any()
        norms = np.linalg.norm(rendered.features[rendered.hit_mask], axis=1)
        assert np.all(norms <= 1.0 + 1e-12)
        assert rendered.camera == "front"

    def test_grid_must_divide_resolution(self, centred_scene):
        camera = cameras_for_scene(centred_scene, 28.0, 32)[0]
        with pytest.raises(ValueError, match="not divisible"):
            render_feature_map(build_feature_field(centred_scene, 0, 8), camera, 3)


class TestFit3dFinetune:
    def test_returns_frozen_copy(self, student, train_split):
        digest = student.digest()
        result = fit3d_finetune(student, train_split, Fit3dConfig(steps=3, batch_size=2))
        assert result.teacher.frozen
        assert len(result.losses) == 3
        assert student.digest() == digest
        assert not student.frozen
        assert result.teacher.digest() != digest

    def test_l1_loss_decreases(self, student, train_split):
        config = Fit3dConfig(steps=30, batch_size=4, learning_rate=1e-2, log_interval=10)
        losses = fit3d_finetune(student, train_split, config).losses
        assert np.mean(losses[-5:]) < np.mean(losses[:5])

    def test_targets_equal_to_outputs_give_zero_loss(self, student, train_split):
        with no_grad():
            own = encode(train_split.images, student)[-1].tokens.values
        data = SceneDataset(
            train_split.manifest, train_split.images, own,
            train_split.actions, train_split.scene_ids,
        )
        result = fit3d_finetune(student, data, Fit3dConfig(steps=1, batch_size=2))
        assert result.losses[0] < 1e-12

    def test_frozen_encoder_rejected(self, teacher, train_split):
        with pytest.raises(ValueError, match="unfrozen"):
            fit3d_finetune(teacher, train_split, Fit3dConfig(steps=1))

    def test_empty_dataset_rejected(self, student, train_split):
        empty = SceneDataset(
            train_split.manifest, train_split.images[:0], train_split.targets[:0],
            train_split.actions[:0], train_split.scene_ids[:0],
        )
        with pytest.raises(DatasetError, match="empty"):
            fit3d_finetune(student, empty, Fit3dConfig(steps=1))


class TestConsistency:
    def test_identical_cameras_score_one(self, student, centred_scene):
        front = cameras_for_scene(centred_scene, 7.0, 8)[0]
        assert consistency_score(student, centred_scene, front, front) == pytest.approx(1.0)

    def test_score_is_a_cosine(self, student, centred_scene):
        front, side = cameras_for_scene(centred_scene, 7.0, 8)
        assert -1.0 <= consistency_score(student, centred_scene, front, side) <= 1.0

    def test_no_shared_target_voxel(self, student, centred_scene):
        front = cameras_for_scene(centred_scene, 7.0, 8)[0]
        away = CameraSpec("away", (8.0, 6.0, -12.0), (8.0, 6.0, -30.0), 7.0, 8)
        with pytest.raises(ValueError, match="share no visible target voxel"):
            consistency_score(student, centred_scene, front, away)

    def test_mean_consistency_needs_a_scene(self, student):
        with pytest.raises(ValueError):
            mean_consistency(student, [], 7.0)
