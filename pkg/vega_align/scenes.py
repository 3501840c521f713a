"""
vega-align - Synthetic voxel scenes

A scene is a G^3 voxel grid holding one red 2x2x2 target box (object id
0) and a handful of small coloured distractor boxes. The ground-truth
action reaches for the target centroid, so the label depends on where
the target sits in depth, which a single view only partly reveals.

Axes: x right, y up, z away from the front camera. Voxel (i, j, k)
occupies [i, i+1) x [j, j+1) x [k, k+1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraSpec, rasterize
from .config import DataConfig, Difficulty
from .policy_head import Action
from .rng import Xoshiro256, derive_seed

logger = logging.getLogger("vega_align")

TARGET_ID = 0
TARGET_SIZE = 2
TARGET_COLOR = (0.9, 0.1, 0.1)
DISTRACTOR_PALETTE: tuple[tuple[float, float, float], ...] = (
    (0.1, 0.7, 0.2),
    (0.15, 0.3, 0.9),
    (0.9, 0.8, 0.1),
    (0.6, 0.2, 0.8),
    (0.1, 0.8, 0.8),
)
EASY_BACKGROUND = (0.2, 0.2, 0.25)
HEIGHT_JITTER = 2.0
MAX_PLACEMENT_ATTEMPTS = 50


@dataclass
class SceneSpec:
    grid_size: int
    background: tuple[float, float, float] = EASY_BACKGROUND
    camera_height: float = 0.0
    difficulty: Difficulty = Difficulty.EASY
    seed: int = 0
    occupancy: np.ndarray = field(init=False)
    colors: np.ndarray = field(init=False)
    object_ids: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        g = self.grid_size
        self.occupancy = np.zeros((g, g, g), dtype=bool)
        self.colors = np.zeros((g, g, g, 3))
        self.object_ids = np.full((g, g, g), -1, dtype=np.int64)

    def add_box(
        self,
        lo: tuple[int, int, int],
        size: tuple[int, int, int],
        color: tuple[float, float, float],
        object_id: int,
    ) -> bool:
        """Occupy a box; returns False (and changes nothing) if it leaves the grid or overlaps."""
        g = self.grid_size
        if any(s <= 0 or start < 0 or start + s > g for start, s in zip(lo, size)):
            return False
        region = tuple(slice(start, start + s) for start, s in zip(lo, size))
        if self.occupancy[region].any():
            return False
        self.occupancy[region] = True
        self.colors[region] = color
        self.object_ids[region] = object_id
        return True

    @property
    def target_voxels(self) -> np.ndarray:
        return np.argwhere(self.object_ids == TARGET_ID)

    @property
    def target_centroid(self) -> np.ndarray:
        voxels = self.target_voxels
        if len(voxels) == 0:
            raise ValueError("scene has no target object")
        return voxels.mean(axis=0) + 0.5

    @property
    def num_distractors(self) -> int:
        return int(self.object_ids.max()) if self.occupancy.any() else 0

    def voxel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Occupied voxel indices [M, 3] in index order and their centres."""
        indices = np.argwhere(self.occupancy)
        return indices, indices + 0.5


def _random_lo(rng: Xoshiro256, size: tuple[int, int, int], g: int, margin: int) -> tuple[int, ...]:
    return tuple(rng.integers(margin, g - margin - s + 1) for s in size)


def generate_scene(
    seed: int, difficulty: Difficulty | str, grid_size: int = 16
) -> SceneSpec:
    """Deterministic scene from (seed, difficulty).

    Easy: 0-1 distractors, fixed background, no camera height jitter.
    Hard: 2-4 distractors, random background, height jitter in [-2, 2].
    """
    difficulty = Difficulty(difficulty)
    rng = Xoshiro256(derive_seed(seed, "scene", difficulty.value))
    g = grid_size
    scene = SceneSpec(grid_size=g, difficulty=difficulty, seed=seed)

    target_size = (TARGET_SIZE,) * 3
    scene.add_box(_random_lo(rng, target_size, g, 2), target_size, TARGET_COLOR, TARGET_ID)

    if difficulty is Difficulty.EASY:
        wanted = rng.integers(0, 2)
    else:
        wanted = rng.integers(2, 5)
    placed = 0
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if placed == wanted:
            break
        size = (rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4))
        lo = _random_lo(rng, size, g, 1)
        color = DISTRACTOR_PALETTE[rng.integers(0, len(DISTRACTOR_PALETTE))]
        if scene.add_box(lo, size, color, placed + 1):
            placed += 1
    if placed < wanted:
        logger.warning(f"scene {seed}: placed {placed} of {wanted} distractors")

    if difficulty is Difficulty.HARD:
        scene.background = tuple(float(c) for c in rng.uniform(0.05, 0.6, 3))
        scene.camera_height = float(rng.uniform(-HEIGHT_JITTER, HEIGHT_JITTER, 1)[0])
    return scene


def cameras_for_scene(
    scene: SceneSpec, focal_length: float = 28.0, image_size: int = 32, count: int = 2
) -> list[CameraSpec]:
    """``front`` and ``side`` cameras aimed just below the grid centre."""
    c = scene.grid_size / 2.0
    h = scene.camera_height
    look = (c, c - 2.0, c)
    cams = [
        CameraSpec("front", (c, c + 3.0 + h, c - 20.0), look, focal_length, image_size),
        CameraSpec("side", (c + 14.0, c + 5.0 + h, c - 14.0), look, focal_length, image_size),
    ]
    return cams[:count]


def render_rgb(scene: SceneSpec, camera: CameraSpec) -> np.ndarray:
    """[3, H, W] image in [0, 1]; misses show the scene background."""
    indices, centers = scene.voxel_centers()
    raster = rasterize(camera, centers)
    res = camera.resolution
    image = np.empty((res, res, 3))
    image[:] = scene.background
    if len(indices):
        hit = raster.hit
        vox = indices[raster.index[hit]]
        image[hit] = scene.colors[vox[:, 0], vox[:, 1], vox[:, 2]]
    return image.transpose(2, 0, 1).copy()


def ground_truth_action(scene: SceneSpec) -> Action:
    """(target centroid / grid size, grasp = 1)."""
    position = scene.target_centroid / scene.grid_size
    return Action(np.concatenate([position, [1.0]]))


def split_scene_seed(config: DataConfig, split: str, index: int) -> int:
    return derive_seed(config.seed, split, index)
