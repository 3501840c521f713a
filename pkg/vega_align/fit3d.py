"""
vega-align - 3D-aware teacher

Builds the frozen spatial teacher in two steps:

  1. A voxel feature field gives every occupied voxel a unit feature that
     depends only on (voxel position, object id, seed), so the same voxel
     renders to the same feature from any camera.
  2. ``fit3d_finetune`` fits a fresh encoder's final-block tokens to the
     rendered per-patch feature maps with an L1 loss, then freezes it.

``consistency_score`` measures how similar an encoder's tokens are at
patches that see the same target voxels from two cameras.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .camera import CameraSpec, dominant_patches, patch_of_pixels, rasterize
from .config import Fit3dConfig
from .encoder import EncoderParams, encode
from .errors import DatasetError, TrainingError
from .optim import Adam
from .rng import Xoshiro256, derive_seed
from .scenes import TARGET_ID, SceneSpec, cameras_for_scene, render_rgb
from .tensor import Tape, Tensor, abs_, mean, no_grad, sub
from .tensor_io import quantize_image

if TYPE_CHECKING:
    from .dataset import SceneDataset

logger = logging.getLogger("vega_align")

FOURIER_SCALE = 0.35


def background_feature(dim: int) -> np.ndarray:
    """The fixed unit vector e1."""
    e = np.zeros(dim)
    e[0] = 1.0
    return e


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class FeatureField:
    occupancy: np.ndarray
    features: np.ndarray
    indices: np.ndarray
    dim: int
    seed: int

    def feature_at(self, voxel: tuple[int, int, int]) -> np.ndarray:
        return self.features[voxel]


@dataclass
class RenderedFeatureMap:
    features: np.ndarray
    hit_mask: np.ndarray
    camera: str = ""

    @property
    def num_patches(self) -> int:
        return self.features.shape[0]


@dataclass
class Fit3dResult:
    teacher: EncoderParams
    losses: list[float] = field(default_factory=list)


def position_code(centers: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Unit Fourier code of voxel centres under a seed-derived frequency matrix."""
    n_freq = (dim + 1) // 2
    freqs = Xoshiro256(derive_seed(seed, "fourier", dim)).normal((n_freq, 3), scale=FOURIER_SCALE)
    phase = np.asarray(centers, dtype=np.float64).reshape(-1, 3) @ freqs.T
    code = np.concatenate([np.cos(phase), np.sin(phase)], axis=1)[:, :dim]
    return _unit(code)


def object_code(object_id: int, dim: int, seed: int) -> np.ndarray:
    return _unit(Xoshiro256(derive_seed(seed, "object", object_id, dim)).normal(dim))


def build_feature_field(scene: SceneSpec, seed: int, dim: int) -> FeatureField:
    """Unit feature per occupied voxel: normalize(position code + object code)."""
    indices, centers = scene.voxel_centers()
    g = scene.grid_size
    features = np.zeros((g, g, g, dim))
    if len(indices):
        ids = scene.object_ids[indices[:, 0], indices[:, 1], indices[:, 2]]
        codes = {int(i): object_code(int(i), dim, seed) for i in np.unique(ids)}
        obj = np.stack([codes[int(i)] for i in ids])
        features[indices[:, 0], indices[:, 1], indices[:, 2]] = _unit(
            position_code(centers, dim, seed) + obj
        )
    return FeatureField(scene.occupancy.copy(), features, indices, dim, seed)


def render_feature_map(field: FeatureField, camera: CameraSpec, grid: int) -> RenderedFeatureMap:
    """Per-patch visibility-weighted mean of front-surface voxel features.

    Patches that see no voxel carry the background feature.
    """
    if camera.resolution % grid:
        raise ValueError(
            f"resolution {camera.resolution} is not divisible into a {grid}x{grid} grid"
        )
    raster = rasterize(camera, field.indices + 0.5)
    patches = patch_of_pixels(camera.resolution, camera.resolution // grid)
    n = grid * grid
    out = np.tile(background_feature(field.dim), (n, 1))
    hit_mask = np.zeros(n, dtype=bool)
    idx = field.indices
    for patch in range(n):
        ids = raster.index[patches == patch]
        ids = ids[ids >= 0]
        if len(ids) == 0:
            continue
        voxels, counts = np.unique(ids, return_counts=True)
        weights = counts / counts.sum()
        feats = field.features[idx[voxels, 0], idx[voxels, 1], idx[voxels, 2]]
        out[patch] = weights @ feats
        hit_mask[patch] = True
    return RenderedFeatureMap(out, hit_mask, camera.name)


def fit3d_finetune(
    encoder: EncoderParams, dataset: SceneDataset, config: Fit3dConfig
) -> Fit3dResult:
    """Minimize mean |final-block tokens - rendered targets| and return a frozen copy.

    ``encoder`` and ``dataset`` are left untouched.
    """
    if encoder.frozen:
        raise ValueError("fit3d_finetune needs an unfrozen encoder")
    if len(dataset) == 0:
        raise DatasetError(f"{dataset.manifest.split}: cannot fine-tune on an empty dataset")

    params = encoder.copy(frozen=False)
    optimizer = Adam(list(params), config.learning_rate)
    rng = Xoshiro256(derive_seed(config.seed, "fit3d"))
    result = Fit3dResult(teacher=params)

    logger.info(
        f"Teacher fine-tuning: {config.steps} steps, batch {config.batch_size}, "
        f"{len(dataset)} views"
    )
    for step in range(1, config.steps + 1):
        batch = [rng.integers(0, len(dataset)) for _ in range(config.batch_size)]
        targets = Tensor(dataset.targets[batch])
        with Tape() as tape:
            tokens = encode(dataset.images[batch], params)[-1].tokens
            loss = mean(abs_(sub(tokens, targets)))
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"teacher fine-tuning diverged at step {step}: l1 loss {value}")
        tape.backward(loss)
        optimizer.step()
        optimizer.zero_grad()
        result.losses.append(value)
        if step % config.log_interval == 0 or step == config.steps:
            logger.info(f"fit3d step {step}/{config.steps}: l1 {value:.6f}")

    params.freeze()
    return result


def consistency_score(
    encoder: EncoderParams, scene: SceneSpec, camera_a: CameraSpec, camera_b: CameraSpec
) -> float:
    """Mean cosine similarity of final-block tokens at corresponding target patches.

    A target voxel visible in both views pairs its dominant patch in view A
    with its dominant patch in view B.
    """
    indices, centers = scene.voxel_centers()
    is_target = scene.object_ids[indices[:, 0], indices[:, 1], indices[:, 2]] == TARGET_ID
    patch = encoder.config.patch_size
    map_a = dominant_patches(rasterize(camera_a, centers), patch)
    map_b = dominant_patches(rasterize(camera_b, centers), patch)
    pairs = [
        (map_a[v], map_b[v])
        for v in sorted(set(map_a) & set(map_b))
        if is_target[v]
    ]
    if not pairs:
        raise ValueError(
            f"cameras {camera_a.name!r} and {camera_b.name!r} share no visible target voxel"
        )
    with no_grad():
        tok_a = encode(quantize_image(render_rgb(scene, camera_a)), encoder)[-1].tokens.values
        tok_b = encode(quantize_image(render_rgb(scene, camera_b)), encoder)[-1].tokens.values
    a = _unit(tok_a[[p for p, _ in pairs]])
    b = _unit(tok_b[[q for _, q in pairs]])
    return float(np.mean(np.sum(a * b, axis=1)))


def mean_consistency(
    encoder: EncoderParams, scenes: list[SceneSpec], focal_length: float
) -> float:
    """Average front/side consistency over the scenes where the target is seen by both."""
    scores = []
    size = encoder.config.image_size
    for scene in scenes:
        front, side = cameras_for_scene(scene, focal_length, size, 2)
        try:
            scores.append(consistency_score(encoder, scene, front, side))
        except ValueError:
            logger.debug(f"scene {scene.seed}: target not visible from both cameras, skipped")
    if not scores:
        raise ValueError("no scene had a target visible from both cameras")
    return float(np.mean(scores))
