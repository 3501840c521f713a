"""Tests for synthetic voxel scenes."""

import numpy as np
import pytest

from vega_align.camera import CameraSpec
from vega_align.config import Difficulty
from vega_align.scenes import (
    EASY_BACKGROUND,
    HEIGHT_JITTER,
    TARGET_COLOR,
    SceneSpec,
    cameras_for_scene,
    generate_scene,
    ground_truth_action,
    render_rgb,
)


class TestSceneSpec:
    def test_add_box_occupies_region(self):
        scene = SceneSpec(grid_size=8)
        assert scene.add_box((1, 2, 3), (2, 1, 1), (1.0, 0.0, 0.0), 0)
        assert scene.occupancy.sum() == 2
        assert scene.object_ids[1, 2, 3] == 0 and scene.object_ids[2, 2, 3] == 0

    def test_add_box_rejects_overlap_without_change(self):
        scene = SceneSpec(grid_size=8)
        scene.add_box((0, 0, 0), (2, 2, 2), (1.0, 0.0, 0.0), 0)
        before = scene.occupancy.copy()
        assert not scene.add_box((1, 1, 1), (2, 2, 2), (0.0, 1.0, 0.0), 1)
        np.testing.assert_array_equal(scene.occupancy, before)

    def test_add_box_rejects_out_of_grid(self):
        scene = SceneSpec(grid_size=8)
        assert not scene.add_box((7, 0, 0), (2, 1, 1), (1.0, 0.0, 0.0), 0)
        assert not scene.add_box((-1, 0, 0), (1, 1, 1), (1.0, 0.0, 0.0), 0)
        assert not scene.occupancy.any()

    def test_target_centroid_is_box_centre(self):
        scene = SceneSpec(grid_size=8)
        scene.add_box((2, 3, 4), (2, 2, 2), TARGET_COLOR, 0)
        np.testing.assert_array_equal(scene.target_centroid, [3.0, 4.0, 5.0])

    def test_missing_target(self):
        with pytest.raises(ValueError, match="no target"):
            SceneSpec(grid_size=8).target_centroid


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(17, "hard")
        b = generate_scene(17, "hard")
        np.testing.assert_array_equal(a.occupancy, b.occupancy)
        np.testing.assert_array_equal(a.colors, b.colors)
        assert a.background == b.background and a.camera_height == b.camera_height

    def test_target_is_two_cubed(self):
        for seed in range(5):
            assert len(generate_scene(seed, Difficulty.EASY).target_voxels) == 8

    def test_easy_scenes(self):
        for seed in range(10):
            scene = generate_scene(seed, Difficulty.EASY)
            assert scene.num_distractors <= 1
            assert scene.background == EASY_BACKGROUND
            assert scene.camera_height == 0.0

    def test_hard_scenes(self):
        for seed in range(10):
            scene = generate_scene(seed, Difficulty.HARD)
            assert 2 <= scene.num_distractors <= 4
            assert -HEIGHT_JITTER <= scene.camera_height <= HEIGHT_JITTER
            assert scene.background != EASY_BACKGROUND

    def test_target_stays_off_the_border(self):
        for seed in range(10):
            voxels = generate_scene(seed, Difficulty.HARD, grid_size=16).target_voxels
            assert voxels.min() >= 2 and voxels.max() <= 13


class TestCameras:
    def test_front_and_side(self):
        cams = cameras_for_scene(generate_scene(0, "easy"))
        assert [c.name for c in cams] == ["front", "side"]
        assert cameras_for_scene(generate_scene(0, "easy"), count=1)[0].name == "front"

    def test_height_jitter_moves_cameras(self):
        scene = generate_scene(3, "easy")
        base = cameras_for_scene(scene)[0].position
        scene.camera_height = 1.5
        assert cameras_for_scene(scene)[0].position[1] == base[1] + 1.5


class TestRendering:
    def test_image_shape_and_range(self):
        scene = generate_scene(4, "hard")
        image = render_rgb(scene, cameras_for_scene(scene)[0])
        assert image.shape == (3, 32, 32)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_empty_scene_is_background(self):
        scene = SceneSpec(grid_size=16, background=(0.3, 0.4, 0.5))
        image = render_rgb(scene, cameras_for_scene(scene)[0])
        np.testing.assert_array_equal(image[:, 5, 7], [0.3, 0.4, 0.5])
        assert np.all(image[0] == 0.3)

    def test_target_visible_from_front(self):
        scene = SceneSpec(grid_size=16)
        scene.add_box((7, 7, 7), (2, 2, 2), TARGET_COLOR, 0)
        image = render_rgb(scene, cameras_for_scene(scene)[0])
        red = np.all(np.isclose(image.transpose(1, 2, 0), TARGET_COLOR), axis=-1)
        assert red.any()

    def test_depth_is_ambiguous_from_one_view(self):
        # A box twice as large and twice as far renders to the same pixels.
        camera = CameraSpec("mono", (8.0, 8.0, -4.0), (8.0, 8.0, 8.0), 28.0, 32)
        near = SceneSpec(grid_size=16)
        near.add_box((7, 7, 3), (2, 2, 2), TARGET_COLOR, 0)
        far = SceneSpec(grid_size=16)
        far.add_box((6, 6, 10), (4, 4, 4), TARGET_COLOR, 0)
        diff = np.abs(render_rgb(near, camera) - render_rgb(far, camera)).mean()
        assert diff < 0.01
        assert near.target_centroid[2] != far.target_centroid[2]


class TestGroundTruth:
    def test_normalized_position_and_grasp(self):
        scene = SceneSpec(grid_size=16)
        scene.add_box((6, 6, 6), (2, 2, 2), TARGET_COLOR, 0)
        action = ground_truth_action(scene)
        np.testing.assert_allclose(action.position, [0.4375] * 3)
        assert action.grasp == 1.0

    def test_generated_labels_in_unit_cube(self):
        for seed in range(10):
            values = ground_truth_action(generate_scene(seed, "hard")).values
            assert values.min() > 0.0 and values[:3].max() < 1.0
