"""
vega-align - Configuration

Pydantic models for every tunable in the package. ``TrainConfig`` is
the single JSON document the CLI accepts; the encoder, dataset and
teacher fine-tuning settings are nested sections of it.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Difficulty(str, Enum):
    EASY = "easy"
    HARD = "hard"


class StudentInit(str, Enum):
    PLAIN = "plain"
    TEACHER = "teacher"


DATA_FRACTIONS: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
LAMBDA_GRID: tuple[float, ...] = (0.05, 0.1, 0.2)
DEFAULT_SEEDS: tuple[int, ...] = (0, 1, 2, 3, 4)


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    image_size: int = Field(32, gt=0)
    patch_size: int = Field(8, gt=0)
    channels: int = Field(3, gt=0)
    embed_dim: int = Field(32, gt=0)
    num_blocks: int = Field(4, gt=0)
    num_heads: int = Field(4, gt=0)
    mlp_ratio: int = Field(4, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_divisibility(self) -> EncoderConfig:
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        return self

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio


class AlignmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    align_lambda: float = Field(0.1, ge=0.0)
    enabled: bool = True


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_scenes: int = Field(512, gt=0)
    eval_scenes: int = Field(128, gt=0)
    cameras_per_scene: int = Field(2, ge=1, le=2)
    grid_size: int = Field(16, ge=8)
    focal_length: float = Field(28.0, gt=0.0)
    seed: int = 0
    feature_seed: int = 0


class Fit3dConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(500, gt=0)
    batch_size: int = Field(8, gt=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    seed: int = 1
    log_interval: int = Field(50, gt=0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(2000, gt=0)
    batch_size: int = Field(8, gt=0)
    learning_rate: float = Field(5e-4, gt=0.0)
    decay_step: int = Field(1000, ge=0)
    align_lambda: float = Field(0.1, ge=0.0)
    alignment_enabled: bool = True
    freeze_student: bool = False
    student_init: StudentInit = StudentInit.PLAIN
    teacher_checkpoint: str | None = None
    data_fraction: float = 1.0
    seed: int = 0
    eval_interval: int = Field(50, gt=0)
    tau: float = Field(0.1, gt=0.0)
    grad_clip: float = Field(1.0, gt=0.0)
    record_wall_time: bool = False
    analysis_clusters: int = Field(5, gt=0)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    fit3d: Fit3dConfig = Field(default_factory=Fit3dConfig)

    @field_validator("data_fraction")
    @classmethod
    def _check_fraction(cls, value: float) -> float:
        if value not in DATA_FRACTIONS:
            raise ValueError(f"data_fraction must be one of {DATA_FRACTIONS}, got {value}")
        return value

    @model_validator(mode="after")
    def _check_schedule(self) -> TrainConfig:
        if self.decay_step > self.steps:
            raise ValueError(f"decay_step {self.decay_step} exceeds steps {self.steps}")
        return self

    @property
    def alignment(self) -> AlignmentConfig:
        return AlignmentConfig(align_lambda=self.align_lambda, enabled=self.alignment_enabled)

    @classmethod
    def from_json_file(cls, path: str | Path) -> TrainConfig:
        with open(path, "r") as f:
            return cls.model_validate(json.load(f))
