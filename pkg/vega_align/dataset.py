"""
vega-align - Dataset building and persistence

A split is a set of scenes rendered from each camera. On disk:

    manifest.json
    images/scene{i}_cam{j}.ppm      8-bit RGB
    targets/scene{i}_cam{j}.vegt    [N, d] rendered feature targets (f32)
    actions.vegt                    [S, 4] ground-truth actions (f32)

Images are quantized to 8 bits and targets/actions rounded to float32
when a split is built, so a loaded split equals the built one bitwise.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import DataConfig, Difficulty, EncoderConfig
from .errors import DatasetError
from .fit3d import build_feature_field, render_feature_map
from .scenes import (
    SceneSpec,
    cameras_for_scene,
    generate_scene,
    ground_truth_action,
    render_rgb,
    split_scene_seed,
)
from .tensor_io import quantize_image, read_ppm, read_tensor, write_ppm, write_tensor

logger = logging.getLogger("vega_align")

DATASET_VERSION = "vega-dataset/1"
SPLITS: dict[str, Difficulty] = {
    "train": Difficulty.EASY,
    "eval_easy": Difficulty.EASY,
    "eval_hard": Difficulty.HARD,
}


class ImageRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    camera_id: int
    camera: str
    image: str
    target: str


class SceneRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scene_id: int
    seed: int
    action: list[float]
    images: list[ImageRecord]


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str = DATASET_VERSION
    split: str
    difficulty: Difficulty
    seed: int
    feature_seed: int
    config: dict[str, Any] = Field(default_factory=dict)
    scenes: list[SceneRecord] = Field(default_factory=list)


class SceneDataset:
    """In-memory split: images [M,3,H,W], targets [M,N,d], actions [S,4]."""

    def __init__(
        self,
        manifest: DatasetManifest,
        images: np.ndarray,
        targets: np.ndarray,
        actions: np.ndarray,
        scene_ids: np.ndarray,
    ) -> None:
        self.manifest = manifest
        self.images = images
        self.targets = targets
        self.actions = actions
        self.scene_ids = scene_ids

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_scenes(self) -> int:
        return len(self.actions)

    @property
    def image_actions(self) -> np.ndarray:
        """Ground-truth action of every image's scene, [M, 4]."""
        return self.actions[self.scene_ids]

    @property
    def grid_size(self) -> int:
        return int(self.manifest.config.get("data", {}).get("grid_size", 16))

    def scenes(self, limit: int | None = None) -> list[SceneSpec]:
        """Regenerate the first ``limit`` scenes from their manifest seeds."""
        records = self.manifest.scenes if limit is None else self.manifest.scenes[:limit]
        return [generate_scene(r.seed, self.manifest.difficulty, self.grid_size) for r in records]

    def fraction_indices(self, fraction: float) -> np.ndarray:
        """Image indices of the first round(fraction * S) scenes (seed order)."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"data fraction must lie in (0, 1], got {fraction}")
        keep = int(round(fraction * self.num_scenes))
        return np.flatnonzero(self.scene_ids < keep)


def build_dataset(
    data: DataConfig,
    encoder: EncoderConfig,
    split: str,
    num_scenes: int | None = None,
) -> SceneDataset:
    """Generate, render and quantize one split."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLITS)}")
    difficulty = SPLITS[split]
    if num_scenes is None:
        num_scenes = data.train_scenes if split == "train" else data.eval_scenes

    images, targets, actions, scene_ids = [], [], [], []
    records: list[SceneRecord] = []
    for i in range(num_scenes):
        seed = split_scene_seed(data, split, i)
        scene = generate_scene(seed, difficulty, data.grid_size)
        field = build_feature_field(scene, data.feature_seed, encoder.embed_dim)
        action = ground_truth_action(scene).values.astype(np.float32).astype(np.float64)
        actions.append(action)
        image_records = []
        cams = cameras_for_scene(
            scene, data.focal_length, encoder.image_size, data.cameras_per_scene
        )
        for j, cam in enumerate(cams):
            images.append(quantize_image(render_rgb(scene, cam)))
            rendered = render_feature_map(field, cam, encoder.grid)
            targets.append(rendered.features.astype(np.float32).astype(np.float64))
            scene_ids.append(i)
            name = f"scene{i}_cam{j}"
            image_records.append(
                ImageRecord(
                    camera_id=j, camera=cam.name,
                    image=f"images/{name}.ppm", target=f"targets/{name}.vegt",
                )
            )
        records.append(
            SceneRecord(
                scene_id=i, seed=seed, action=[float(a) for a in action], images=image_records
            )
        )

    manifest = DatasetManifest(
        split=split,
        difficulty=difficulty,
        seed=data.seed,
        feature_seed=data.feature_seed,
        config={"data": data.model_dump(mode="json"), "encoder": encoder.model_dump(mode="json")},
        scenes=records,
    )
    logger.info(
        f"Built split {split!r}: {num_scenes} scenes, {len(images)} views ({difficulty.value})"
    )
    return SceneDataset(
        manifest,
        np.stack(images),
        np.stack(targets),
        np.stack(actions),
        np.asarray(scene_ids, dtype=np.int64),
    )


def write_dataset(dataset: SceneDataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    k = 0
    for scene in dataset.manifest.scenes:
        for rec in scene.images:
            write_ppm(root / rec.image, dataset.images[k])
            write_tensor(root / rec.target, dataset.targets[k], "f32")
            k += 1
    write_tensor(root / "actions.vegt", dataset.actions, "f32")
    (root / "manifest.json").write_text(dataset.manifest.model_dump_json(indent=2))


def read_manifest(path: str | Path) -> DatasetManifest:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"{manifest_path}: manifest missing")
    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: malformed manifest ({exc})") from exc
    version = raw.get("version") if isinstance(raw, dict) else None
    if version is None:
        raise DatasetError(f"{manifest_path}: malformed manifest (no version tag)")
    if version != DATASET_VERSION:
        raise DatasetError(
            f"{manifest_path}: unsupported dataset version {version!r}, "
            f"expected {DATASET_VERSION!r}"
        )
    try:
        return DatasetManifest.model_validate(raw)
    except ValidationError as exc:
        raise DatasetError(
            f"{manifest_path}: malformed manifest ({exc.error_count()} errors)"
        ) from exc


def load_dataset(path: str | Path) -> SceneDataset:
    root = Path(path)
    manifest = read_manifest(root)
    images, targets, scene_ids = [], [], []
    for scene in manifest.scenes:
        for rec in scene.images:
            images.append(read_ppm(root / rec.image))
            targets.append(read_tensor(root / rec.target))
            scene_ids.append(scene.scene_id)
    actions = read_tensor(root / "actions.vegt")
    if actions.shape[0] != len(manifest.scenes):
        raise DatasetError(
            f"{root / 'actions.vegt'}: {actions.shape[0]} actions for {len(manifest.scenes)} scenes"
        )
    if not images:
        raise DatasetError(f"{root}: dataset has no images")
    return SceneDataset(
        manifest,
        np.stack(images),
        np.stack(targets),
        actions,
        np.asarray(scene_ids, dtype=np.int64),
    )
