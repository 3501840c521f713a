"""
vega-align - Experiment protocols

Sweeps and probes built on ``trainer.train``:

  - ``sweep_lambda``: aligned runs over the lambda grid and seeds
  - ``sweep_data_fraction``: aligned vs. baseline (alignment off) per fraction
  - ``encoder_variant_experiment``: {plain, teacher} init x {frozen, unfrozen}
    student, alignment off
  - ``teacher_ablation``: no teacher vs. a frozen plain encoder vs. the
    fine-tuned teacher as the alignment target
  - ``training_curves``: eval rates per logged step, aligned vs. baseline
  - ``convergence_curves``: action loss per logged step for plain-init and
    teacher-init students, alignment off
  - ``depth_probe``: least-squares readout of target depth from pooled tokens

Every protocol returns plain row dicts; ``write_rows`` and
``summarize`` turn them into the CSVs the CLI writes.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .config import DATA_FRACTIONS, DEFAULT_SEEDS, LAMBDA_GRID, StudentInit, TrainConfig
from .dataset import SceneDataset
from .encoder import EncoderParams, encode, init_encoder
from .errors import ProbeError
from .rng import derive_seed
from .tensor import no_grad
from .trainer import EVAL_CHUNK, TrainResult, evaluate, train

logger = logging.getLogger("vega_align")

PROBE_RIDGE = 1e-6
PROBE_MAX_CONDITION = 1e12
DEPTH_COLUMN = 2

LAMBDA_HEADER = ("align_lambda", "seed", "easy_rate", "hard_rate")
FRACTION_HEADER = ("data_fraction", "variant", "seed", "easy_rate", "hard_rate")
VARIANT_HEADER = ("variant", "seed", "easy_rate", "hard_rate")
CURVE_HEADER = ("step", "variant", "seed", "easy_rate", "hard_rate")
CONVERGENCE_HEADER = ("step", "variant", "seed", "action_loss")
TEACHER_HEADER = ("teacher", "seed", "easy_rate", "hard_rate", "probe_mse")
RATE_METRICS = ("easy_rate", "hard_rate")
VARIANT_METRICS = (*RATE_METRICS, "final_action_loss")
TEACHER_METRICS = (*RATE_METRICS, "probe_mse")

ENCODER_VARIANTS: dict[str, tuple[StudentInit, bool]] = {
    "plain-unfrozen": (StudentInit.PLAIN, False),
    "plain-frozen": (StudentInit.PLAIN, True),
    "teacher-unfrozen": (StudentInit.TEACHER, False),
    "teacher-frozen": (StudentInit.TEACHER, True),
}

TEACHER_ARMS = ("none", "plain", "fit3d")
INIT_ARMS: dict[str, StudentInit] = {
    "plain-init": StudentInit.PLAIN,
    "teacher-init": StudentInit.TEACHER,
}


@dataclass
class ExperimentData:
    train: SceneDataset
    eval_easy: SceneDataset
    eval_hard: SceneDataset


def _run(
    config: TrainConfig, data: ExperimentData, teacher: EncoderParams | None
) -> tuple[TrainResult, float, float]:
    result = train(config, data.train, data.eval_easy, data.eval_hard, teacher=teacher)
    easy = evaluate(result.model, data.eval_easy, config.tau)
    hard = evaluate(result.model, data.eval_hard, config.tau)
    return result, easy.success_rate, hard.success_rate


def _baseline(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"alignment_enabled": False, "align_lambda": 0.0})


def _final_action_loss(result: TrainResult) -> float:
    rows = result.metrics.rows
    return rows[-1].action_loss if rows else float("nan")


def plain_teacher(base: TrainConfig, seed: int) -> EncoderParams:
    """Frozen randomly initialised encoder: a teacher with no 3D fine-tuning."""
    return init_encoder(base.encoder, seed=derive_seed(seed, "plain-teacher")).copy(frozen=True)


# ─── Sweeps ───────────────────────────────────────────────


def sweep_lambda(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    grid: Sequence[float] = LAMBDA_GRID,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    rows = []
    for lam in grid:
        for seed in seeds:
            logger.info(f"lambda sweep: lambda={lam} seed={seed}")
            cfg = base.model_copy(
                update={"align_lambda": lam, "alignment_enabled": True, "seed": seed}
            )
            _, easy, hard = _run(cfg, data, teacher)
            rows.append({"align_lambda": lam, "seed": seed, "easy_rate": easy, "hard_rate": hard})
    return rows


def sweep_data_fraction(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    fractions: Sequence[float] = DATA_FRACTIONS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    """Aligned model and the lambda = 0 baseline (alignment off) at each fraction."""
    rows = []
    for fraction in fractions:
        for seed in seeds:
            aligned = base.model_copy(
                update={"data_fraction": fraction, "seed": seed, "alignment_enabled": True}
            )
            for variant, cfg in (("aligned", aligned), ("baseline", _baseline(aligned))):
                logger.info(f"data sweep: fraction={fraction} variant={variant} seed={seed}")
                _, easy, hard = _run(cfg, data, teacher)
                rows.append(
                    {
                        "data_fraction": fraction,
                        "variant": variant,
                        "seed": seed,
                        "easy_rate": easy,
                        "hard_rate": hard,
                    }
                )
    return rows


def encoder_variant_experiment(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    """Four student variants trained with alignment off.

    Rows also carry the last logged action loss, which the CSV leaves out
    and the per-variant summary averages.
    """
    rows = []
    for variant, (init, frozen) in ENCODER_VARIANTS.items():
        for seed in seeds:
            logger.info(f"encoder variants: {variant} seed={seed}")
            cfg = _baseline(base).model_copy(
                update={"student_init": init, "freeze_student": frozen, "seed": seed}
            )
            result, easy, hard = _run(cfg, data, teacher)
            rows.append(
                {
                    "variant": variant,
                    "seed": seed,
                    "easy_rate": easy,
                    "hard_rate": hard,
                    "final_action_loss": _final_action_loss(result),
                }
            )
    return rows


def teacher_ablation(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    """Same student trained with no teacher, a plain frozen encoder, and ``teacher``.

    The ``plain`` and ``fit3d`` arms differ only in where the target tokens
    come from. ``probe_mse`` is the depth probe on each trained student
    (train split -> eval_easy).
    """
    rows = []
    for seed in seeds:
        aligned = base.model_copy(
            update={"seed": seed, "alignment_enabled": True, "student_init": StudentInit.PLAIN}
        )
        arms = {
            "none": (_baseline(aligned), None),
            "plain": (aligned, plain_teacher(base, seed)),
            "fit3d": (aligned, teacher),
        }
        for arm in TEACHER_ARMS:
            cfg, target = arms[arm]
            logger.info(f"teacher ablation: {arm} seed={seed}")
            result, easy, hard = _run(cfg, data, target)
            probe = depth_probe(result.model.student, data.train, data.eval_easy)
            rows.append(
                {
                    "teacher": arm,
                    "seed": seed,
                    "easy_rate": easy,
                    "hard_rate": hard,
                    "probe_mse": probe.mse,
                }
            )
    return rows


def training_curves(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    """Logged eval rates at every eval interval, aligned vs. baseline."""
    rows = []
    for seed in seeds:
        aligned = base.model_copy(update={"seed": seed, "alignment_enabled": True})
        for variant, cfg in (("aligned", aligned), ("baseline", _baseline(aligned))):
            logger.info(f"training curves: {variant} seed={seed}")
            result = train(cfg, data.train, data.eval_easy, data.eval_hard, teacher=teacher)
            rows.extend(
                {
                    "step": row.step,
                    "variant": variant,
                    "seed": seed,
                    "easy_rate": row.easy_rate,
                    "hard_rate": row.hard_rate,
                }
                for row in result.metrics.rows
            )
    return rows


def convergence_curves(
    base: TrainConfig,
    data: ExperimentData,
    teacher: EncoderParams,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> list[dict[str, Any]]:
    """Logged action loss per step for a plain-init and a teacher-init student.

    Alignment is off in both arms, so the curves differ only in the
    student's starting weights.
    """
    rows = []
    for seed in seeds:
        for variant, init in INIT_ARMS.items():
            logger.info(f"convergence curves: {variant} seed={seed}")
            cfg = _baseline(base).model_copy(update={"seed": seed, "student_init": init})
            result = train(cfg, data.train, data.eval_easy, data.eval_hard, teacher=teacher)
            rows.extend(
                {"step": row.step, "variant": variant, "seed": seed, "action_loss": row.action_loss}
                for row in result.metrics.rows
            )
    return rows


# ─── Depth probe ──────────────────────────────────────────


@dataclass
class ProbeResult:
    mse: float
    weights: np.ndarray
    num_train: int
    num_eval: int

    def to_dict(self) -> dict[str, Any]:
        return {"mse": self.mse, "num_train": self.num_train, "num_eval": self.num_eval}


def pooled_features(encoder: EncoderParams, dataset: SceneDataset, block: int = -2) -> np.ndarray:
    """Mean-pooled tokens of one block for every image, [M, d]."""
    feats = []
    with no_grad():
        for start in range(0, len(dataset), EVAL_CHUNK):
            blocks = encode(dataset.images[start : start + EVAL_CHUNK], encoder)
            feats.append(blocks[block].tokens.values.mean(axis=1))
    return np.concatenate(feats, axis=0)


def fit_depth_probe(
    train_x: np.ndarray,
    train_z: np.ndarray,
    eval_x: np.ndarray,
    eval_z: np.ndarray,
    ridge: float = PROBE_RIDGE,
) -> ProbeResult:
    """Ridge-regularized normal equations with an intercept; eval-split MSE."""
    x = np.hstack([train_x, np.ones((len(train_x), 1))])
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > PROBE_MAX_CONDITION:
        raise ProbeError(f"depth probe system is singular (condition number {cond:.3e})")
    try:
        w = np.linalg.solve(gram, x.T @ train_z)
    except np.linalg.LinAlgError as exc:
        raise ProbeError(f"depth probe system is singular ({exc})") from exc
    ex = np.hstack([eval_x, np.ones((len(eval_x), 1))])
    mse = float(np.mean((ex @ w - eval_z) ** 2))
    return ProbeResult(mse, w, len(train_x), len(eval_x))


def depth_probe(
    encoder: EncoderParams,
    train_data: SceneDataset,
    eval_data: SceneDataset,
    block: int = -2,
    ridge: float = PROBE_RIDGE,
) -> ProbeResult:
    """Linear readout of normalized target depth from student tokens (projector excluded)."""
    return fit_depth_probe(
        pooled_features(encoder, train_data, block),
        train_data.image_actions[:, DEPTH_COLUMN],
        pooled_features(encoder, eval_data, block),
        eval_data.image_actions[:, DEPTH_COLUMN],
        ridge,
    )


# ─── Output ───────────────────────────────────────────────


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[dict[str, Any]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in header})


def summarize(
    rows: list[dict[str, Any]], keys: Sequence[str], metrics: Sequence[str] = RATE_METRICS
) -> list[dict[str, Any]]:
    """Mean and sample standard deviation of each metric per group, in first-seen order."""
    groups: dict[tuple[Any, ...], list[dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        entry = dict(zip(keys, key))
        entry["runs"] = len(members)
        for metric in metrics:
            values = np.array([m[metric] for m in members], dtype=np.float64)
            entry[f"{metric}_mean"] = float(values.mean())
            entry[f"{metric}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out.append(entry)
    return out


def fraction_gaps(rows: list[dict[str, Any]]) -> dict[float, dict[str, float]]:
    """Aligned-minus-baseline mean rates per data fraction."""
    summary = {
        (s["data_fraction"], s["variant"]): s
        for s in summarize(rows, ("data_fraction", "variant"))
    }
    gaps: dict[float, dict[str, float]] = {}
    for fraction in sorted({f for f, _ in summary}):
        aligned, baseline = summary.get((fraction, "aligned")), summary.get((fraction, "baseline"))
        if aligned is None or baseline is None:
            continue
        gaps[fraction] = {
            "easy_gap": aligned["easy_rate_mean"] - baseline["easy_rate_mean"],
            "hard_gap": aligned["hard_rate_mean"] - baseline["hard_rate_mean"],
        }
    return gaps


def data_sweep_summary(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Per (fraction, variant) summary with that fraction's aligned-minus-baseline gaps."""
    gaps = fraction_gaps(rows)
    nan = {"easy_gap": float("nan"), "hard_gap": float("nan")}
    return [
        {**s, **gaps.get(s["data_fraction"], nan)}
        for s in summarize(rows, ("data_fraction", "variant"))
    ]


def summary_header(
    keys: Sequence[str], metrics: Sequence[str] = RATE_METRICS
) -> tuple[str, ...]:
    stats = (f"{m}_{s}" for m in metrics for s in ("mean", "std"))
    return (*keys, "runs", *stats)
