"""
vega-align - Training harness

Wires the student encoder, action head, optional projector and frozen
teacher into one optimization loop:

  - sample a batch from the seed-ordered data-fraction prefix
  - forward the student; action loss from the final block
  - with alignment on: project block L-2 tokens, cosine loss against the
    teacher's precomputed final-block tokens
  - backward L_action + lambda * L_align, clip, Adam, zero gradients
  - every ``eval_interval`` steps evaluate both splits and log a row

Usage:
    from vega_align.trainer import train
    result = train(config, train_data, eval_easy, eval_hard, teacher=teacher)
    result.metrics.write_csv("metrics.csv")
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from .alignment import ProjectorParams, action_loss, align_loss, init_projector, project, vega_loss
from .checkpoint import Checkpoint, CheckpointKind
from .config import StudentInit, TrainConfig
from .dataset import SceneDataset
from .encoder import EncoderParams, encode, init_encoder
from .errors import CheckpointError, ConfigurationError, ShapeError, TrainingError
from .metrics_log import MetricsLog
from .model import InferenceModel, VegaModel, strip_projector
from .optim import Adam, StepDecaySchedule, clip_grad_norm
from .policy_head import ActionHeadParams, init_action_head, success_mask
from .rng import Xoshiro256, derive_seed
from .tensor import Tape, no_grad

logger = logging.getLogger("vega_align")

EVAL_CHUNK = 64


@dataclass
class EvalResult:
    success_rate: float
    mean_action_error: float
    num_images: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "success_rate": self.success_rate,
            "mean_action_error": self.mean_action_error,
            "num_images": self.num_images,
        }


@dataclass
class StepLosses:
    total: float
    action: float
    align: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: MetricsLog
    model: VegaModel
    teacher_digest: str | None = None

    def inference_checkpoint(self) -> Checkpoint:
        return inference_checkpoint(self.model, self.checkpoint.step)


# ─── Evaluation ───────────────────────────────────────────


def check_dataset(dataset: SceneDataset, config: Any, role: str) -> None:
    want = (config.channels, config.image_size, config.image_size)
    if dataset.images.ndim != 4 or dataset.images.shape[1:] != want:
        raise ShapeError(
            f"{role} dataset images have shape {dataset.images.shape[1:]}, encoder expects {want}"
        )


def predict_dataset(model: VegaModel | InferenceModel, dataset: SceneDataset) -> np.ndarray:
    """Action predictions for every image, in fixed-size chunks."""
    out = [
        model.predict(dataset.images[start : start + EVAL_CHUNK])
        for start in range(0, len(dataset), EVAL_CHUNK)
    ]
    return np.concatenate(out, axis=0)


def score_predictions(preds: np.ndarray, gts: np.ndarray, tau: float) -> EvalResult:
    mask = success_mask(preds, gts, tau)
    errors = np.linalg.norm(np.asarray(preds) - np.asarray(gts), axis=1)
    return EvalResult(float(np.mean(mask)), float(np.mean(errors)), int(len(mask)))


def model_from_checkpoint(ckpt: Checkpoint) -> InferenceModel:
    head = ckpt.head_params()
    head.freeze()
    return InferenceModel(student=ckpt.encoder_params().copy(frozen=True), head=head)


def evaluate(
    model: Checkpoint | VegaModel | InferenceModel, dataset: SceneDataset, tau: float
) -> EvalResult:
    """Success-proxy rate and mean action error over every image of a split."""
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    check_dataset(dataset, model.student.config, dataset.manifest.split)
    if model.head.action_dim != dataset.actions.shape[1]:
        raise ShapeError(
            f"action head emits {model.head.action_dim} values, "
            f"dataset actions have {dataset.actions.shape[1]}"
        )
    return score_predictions(predict_dataset(model, dataset), dataset.image_actions, tau)


def inference_checkpoint(model: VegaModel, step: int) -> Checkpoint:
    stripped = strip_projector(model)
    return Checkpoint(
        kind=CheckpointKind.INFERENCE,
        encoder_config=stripped.student.config,
        student=stripped.student.state_dict(),
        frozen=True,
        step=step,
        head=stripped.head.state_dict(),
    )


def teacher_checkpoint(teacher: EncoderParams) -> Checkpoint:
    return Checkpoint(
        kind=CheckpointKind.TEACHER,
        encoder_config=teacher.config,
        student=teacher.state_dict(),
        frozen=True,
    )


# ─── Trainer ──────────────────────────────────────────────


class VegaTrainer:
    """
    Owns every piece of mutable training state: parameters, optimizer
    moments, the batch-sampling generator and the metrics log.
    """

    def __init__(
        self,
        config: TrainConfig,
        train_data: SceneDataset,
        eval_easy: SceneDataset | None = None,
        eval_hard: SceneDataset | None = None,
        teacher: EncoderParams | None = None,
        resume: Checkpoint | None = None,
        metrics: MetricsLog | None = None,
    ) -> None:
        self.config = config
        self.train_data = train_data
        self.eval_easy = eval_easy
        self.eval_hard = eval_hard
        splits = (("train", train_data), ("eval_easy", eval_easy), ("eval_hard", eval_hard))
        for role, data in splits:
            if data is not None:
                check_dataset(data, config.encoder, role)

        needs_teacher = config.alignment_enabled or config.student_init is StudentInit.TEACHER
        if needs_teacher and teacher is None:
            raise ConfigurationError(
                "a teacher checkpoint is required when alignment is enabled or the student "
                "is initialized from the teacher"
            )
        if teacher is not None:
            self._check_teacher(teacher)
            if not teacher.frozen:
                teacher = teacher.copy(frozen=True)
        self.teacher = teacher

        self.model = self._init_model()
        self.optimizer = Adam(self._named_trainable(), config.learning_rate)
        self.schedule = StepDecaySchedule(config.learning_rate, config.decay_step)
        self.rng = Xoshiro256(derive_seed(config.seed, "batches"))
        self.step = 0
        if metrics is None:
            metrics = MetricsLog(config.align_lambda, config.alignment_enabled)
        self.metrics = metrics

        self.pool = train_data.fraction_indices(config.data_fraction)
        if len(self.pool) == 0:
            raise ConfigurationError(
                f"data fraction {config.data_fraction} selects no scenes of {train_data.num_scenes}"
            )
        self.teacher_tokens = self._teacher_targets() if config.alignment_enabled else None

        if resume is not None:
            self._restore(resume)

    @property
    def student(self) -> EncoderParams:
        return self.model.student

    @property
    def head(self) -> ActionHeadParams:
        return self.model.head

    @property
    def projector(self) -> ProjectorParams | None:
        return self.model.projector

    # --- Setup ---

    def _check_teacher(self, teacher: EncoderParams) -> None:
        t, s = teacher.config, self.config.encoder
        if (t.embed_dim, t.image_size, t.patch_size) != (s.embed_dim, s.image_size, s.patch_size):
            raise ConfigurationError(
                f"teacher (d={t.embed_dim}, image {t.image_size}, patch {t.patch_size}) does not "
                f"match student (d={s.embed_dim}, image {s.image_size}, patch {s.patch_size})"
            )

    def _init_model(self) -> VegaModel:
        cfg = self.config
        if cfg.student_init is StudentInit.TEACHER:
            student = self.teacher.copy(frozen=cfg.freeze_student)
        else:
            seed = derive_seed(cfg.seed, "student", cfg.encoder.seed)
            student = init_encoder(cfg.encoder, seed=seed)
            if cfg.freeze_student:
                student.freeze()
        d = cfg.encoder.embed_dim
        head = init_action_head(d, derive_seed(cfg.seed, "head"))
        projector = None
        if cfg.alignment_enabled:
            projector = init_projector(d, derive_seed(cfg.seed, "projector"))
        return VegaModel(student=student, head=head, projector=projector)

    def _named_trainable(self) -> list[tuple[str, Any]]:
        named = []
        for prefix, ps in self.model.parameter_sets():
            if not ps.frozen:
                named.extend((f"{prefix}.{name}", t) for name, t in ps)
        return named

    def _teacher_targets(self) -> np.ndarray:
        images = self.train_data.images[self.pool]
        with no_grad():
            chunks = [
                encode(images[i : i + EVAL_CHUNK], self.teacher)[-1].tokens.values
                for i in range(0, len(images), EVAL_CHUNK)
            ]
        return np.concatenate(chunks, axis=0)

    def _restore(self, ckpt: Checkpoint) -> None:
        if ckpt.kind is not CheckpointKind.TRAIN:
            raise CheckpointError(f"cannot resume from a {ckpt.kind.value} checkpoint")
        if ckpt.encoder_config != self.config.encoder:
            raise CheckpointError("checkpoint encoder config differs from the run config")
        if (ckpt.projector is None) == self.config.alignment_enabled:
            raise CheckpointError("checkpoint projector presence does not match alignment setting")
        if ckpt.rng_state is None:
            raise CheckpointError("training checkpoint has no generator state")
        self.student.load_state(ckpt.student)
        self.head.load_state(ckpt.head or {})
        if self.projector is not None:
            self.projector.load_state(ckpt.projector or {})
        self.optimizer.load_state_dict(ckpt.optimizer)
        self.rng = Xoshiro256.from_state(ckpt.rng_state)
        self.step = ckpt.step
        logger.info(f"Resumed training at step {self.step}")

    # --- Loop ---

    def train_step(self) -> StepLosses:
        cfg = self.config
        step = self.step + 1
        picks = [self.rng.integers(0, len(self.pool)) for _ in range(cfg.batch_size)]
        idx = self.pool[picks]
        images = self.train_data.images[idx]
        gts = self.train_data.image_actions[idx]

        with Tape() as tape:
            pred, student_tokens = self.model.forward(images)
            l_action = action_loss(pred, gts)
            if self.projector is not None:
                projected = project(student_tokens, self.projector)
                l_align = align_loss(projected, self.teacher_tokens[picks])
                total = vega_loss(l_action, l_align, cfg.alignment)
                align_value = l_align.item()
            else:
                total = l_action
                align_value = 0.0

        value = total.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        tape.backward(total)
        clip_grad_norm([t for _, t in self.optimizer.params], cfg.grad_clip)
        self.optimizer.step(self.schedule.lr_at(step))
        self.optimizer.zero_grad()
        self.step = step
        return StepLosses(value, l_action.item(), align_value)

    def evaluate_split(self, dataset: SceneDataset | None) -> EvalResult | None:
        if dataset is None:
            return None
        return score_predictions(
            predict_dataset(self.model, dataset), dataset.image_actions, self.config.tau
        )

    def run(self, until: int | None = None) -> TrainResult:
        cfg = self.config
        last = cfg.steps if until is None else min(until, cfg.steps)
        teacher_digest = self.teacher.digest() if self.teacher is not None else None
        logger.info(
            f"Training steps {self.step + 1}..{last}: lambda={cfg.align_lambda}, "
            f"alignment={'on' if cfg.alignment_enabled else 'off'}, "
            f"fraction={cfg.data_fraction}, seed={cfg.seed}, student={self.student.digest()[:12]}"
        )
        start = time.perf_counter()
        while self.step < last:
            losses = self.train_step()
            logger.debug(
                f"step {self.step}: total {losses.total:.6f} action {losses.action:.6f} "
                f"align {losses.align:.6f}"
            )
            if self.step % cfg.eval_interval == 0 or self.step == cfg.steps:
                self._log_row(losses, start)

        if teacher_digest is not None and self.teacher.digest() != teacher_digest:
            raise TrainingError("teacher parameters changed during training")
        logger.info(
            f"Training reached step {self.step}: student={self.student.digest()[:12]}"
            + (f", teacher={teacher_digest[:12]}" if teacher_digest else "")
        )
        return TrainResult(self.checkpoint(), self.metrics, self.model, teacher_digest)

    def _log_row(self, losses: StepLosses, start: float) -> None:
        easy = self.evaluate_split(self.eval_easy)
        hard = self.evaluate_split(self.eval_hard)
        wall_ms = int((time.perf_counter() - start) * 1000) if self.config.record_wall_time else 0
        row = self.metrics.append(
            step=self.step,
            total_loss=losses.total,
            action_loss=losses.action,
            align_loss=losses.align,
            easy_rate=easy.success_rate if easy else float("nan"),
            hard_rate=hard.success_rate if hard else float("nan"),
            wall_ms=wall_ms,
        )
        logger.info(
            f"step {row.step}: total {row.total_loss:.5f} action {row.action_loss:.5f} "
            f"align {row.align_loss:.5f} easy {row.easy_rate:.3f} hard {row.hard_rate:.3f}"
        )

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            kind=CheckpointKind.TRAIN,
            encoder_config=self.config.encoder,
            student=self.student.state_dict(),
            frozen=self.student.frozen,
            step=self.step,
            head=self.head.state_dict(),
            projector=self.projector.state_dict() if self.projector is not None else None,
            optimizer=self.optimizer.state_dict(),
            rng_state=self.rng.state,
        )


def train(
    config: TrainConfig,
    train_data: SceneDataset,
    eval_easy: SceneDataset | None = None,
    eval_hard: SceneDataset | None = None,
    teacher: EncoderParams | None = None,
    resume: Checkpoint | None = None,
    metrics: MetricsLog | None = None,
) -> TrainResult:
    """Run (or continue) one training job to ``config.steps``."""
    trainer = VegaTrainer(config, train_data, eval_easy, eval_hard, teacher, resume, metrics)
    return trainer.run()
