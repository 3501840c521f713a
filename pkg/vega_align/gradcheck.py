"""
vega-align - Finite-difference gradient suite

Checks every differentiable primitive and the full L_VEGA composite
(encoder, head, projector, cosine alignment) against central differences
at h = 1e-5 for a list of seeds.

Each primitive is checked through a random-weighted sum of its output.
Relative errors use an absolute denominator floor of GRADCHECK_FLOOR:
coordinates whose gradient is below the floor are compared in absolute
terms, everything else at full relative precision.

Usage:
    from vega_align.gradcheck import run_gradient_suite
    report = run_gradient_suite(range(20))
    report.passed  # worst relative error < 1e-5
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .alignment import action_loss, align_loss, init_projector, project, vega_loss
from .config import AlignmentConfig, EncoderConfig
from .encoder import encode, init_encoder
from .policy_head import head_forward, init_action_head
from .rng import Xoshiro256, derive_seed
from .tensor import (
    Tape,
    Tensor,
    abs_,
    add,
    finite_difference_check,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    reshape,
    row_cosine,
    scale,
    softmax,
    square,
    sub,
    sum_,
    swap_axes,
    transpose,
)

logger = logging.getLogger("vega_align")

GRADCHECK_STEP = 1e-5
GRADCHECK_TOLERANCE = 1e-5
GRADCHECK_FLOOR = 1e-4
GRADCHECK_SEEDS: tuple[int, ...] = tuple(range(20))

TINY_ENCODER = EncoderConfig(
    image_size=8, patch_size=4, channels=3, embed_dim=8, num_blocks=2, num_heads=2, mlp_ratio=4
)
MODEL_PARAMS: tuple[str, ...] = (
    "student.patch_embed.bias",
    "student.blocks.0.attn.wq",
    "student.blocks.0.mlp.w1",
    "student.blocks.1.ln1.gain",
    "student.final_norm.gain",
    "head.w1",
    "projector.ln_gain",
    "projector.w1",
)

Case = tuple[str, Callable[[Tensor], Tensor], Tensor]


@dataclass
class GradCheckRow:
    name: str
    seed: int
    coordinates: int
    error: float


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def worst(self) -> GradCheckRow | None:
        return max(self.rows, key=lambda r: r.error, default=None)

    @property
    def worst_error(self) -> float:
        return self.worst.error if self.rows else 0.0

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance

    def write_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("check", "seed", "coordinates", "rel_error"))
            for r in self.rows:
                writer.writerow((r.name, r.seed, r.coordinates, repr(r.error)))

    def to_dict(self) -> dict[str, Any]:
        worst = self.worst
        return {
            "checks": len(self.rows),
            "worst_error": self.worst_error,
            "worst_check": worst.name if worst else None,
            "worst_seed": worst.seed if worst else None,
            "passed": self.passed,
        }


# ─── Helpers ──────────────────────────────────────────────


def _weighted(
    rng: Xoshiro256, op: Callable[[Tensor], Tensor], x: Tensor
) -> Callable[[Tensor], Tensor]:
    """sum(w * op(x)) with a fixed random w."""
    w = Tensor(rng.normal(op(x).shape))
    return lambda t: sum_(mul(op(t), w))


def _away_from_zero(rng: Xoshiro256, shape: tuple[int, ...]) -> np.ndarray:
    signs = np.where(rng.uniform(0.0, 1.0, shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(0.1, 1.0, shape)


# ─── Cases ────────────────────────────────────────────────


def primitive_cases(seed: int) -> Iterator[Case]:
    rng = Xoshiro256(derive_seed(seed, "gradcheck", "primitives"))

    def t(*shape: int) -> Tensor:
        return Tensor(rng.normal(shape))

    def case(name: str, op: Callable[[Tensor], Tensor], x: Tensor) -> Case:
        return name, _weighted(rng, op, x), x

    a, b = t(3, 4), t(3, 4)
    yield case("add", lambda x: add(x, b), a)
    yield case("add.bias", lambda x: add(a, x), t(4))
    yield case("sub", lambda x: sub(a, x), t(3, 4))
    yield case("mul", lambda x: mul(x, b), t(3, 4))
    yield case("scale", lambda x: scale(x, 0.7), t(3, 4))
    yield case("square", square, t(3, 4))
    yield case("abs", abs_, Tensor(_away_from_zero(rng, (3, 4))))
    yield case("gelu", gelu, t(2, 5))
    yield case("reshape", lambda x: reshape(x, (4, 3)), t(3, 4))
    yield case("transpose", transpose, t(2, 3, 4))
    yield case("swap_axes", lambda x: swap_axes(x, 0, 1), t(2, 3, 4))
    yield case("sum.axis", lambda x: sum_(x, axis=1), t(3, 4))
    yield case("mean.axis", lambda x: mean(x, axis=0), t(3, 4))

    w = t(4, 2)
    yield case("matmul.a", lambda x: matmul(x, w), t(3, 4))
    lhs = t(3, 4)
    yield case("matmul.b", lambda x: matmul(lhs, x), t(4, 2))
    rhs = t(2, 4, 3)
    yield case("matmul.batched", lambda x: matmul(x, rhs), t(2, 3, 4))

    gain, bias, xs = t(6), t(6), t(3, 6)
    yield case("layer_norm.x", lambda x: layer_norm(x, gain, bias), t(3, 6))
    yield case("layer_norm.gain", lambda x: layer_norm(xs, x, bias), t(6))
    yield case("layer_norm.bias", lambda x: layer_norm(xs, gain, x), t(6))
    yield case("softmax", softmax, t(3, 5))
    target = t(4, 6)
    yield case("row_cosine", lambda x: row_cosine(x, target), t(4, 6))

    teacher, projected = t(2, 4, 6), t(2, 4, 6)
    yield "align_loss", lambda x: align_loss(x, teacher), projected
    gts, pred = t(3, 4), t(3, 4)
    yield "action_loss", lambda x: action_loss(x, gts), pred

    projector = init_projector(6, derive_seed(seed, "gradcheck", "projector"))
    yield case("project", lambda x: project(x, projector), t(4, 6))


def model_cases(seed: int, config: EncoderConfig = TINY_ENCODER) -> Iterator[Case]:
    """Full L_VEGA on a tiny model, checked w.r.t. one parameter tensor at a time."""
    rng = Xoshiro256(derive_seed(seed, "gradcheck", "model"))
    student = init_encoder(config, seed=derive_seed(seed, "gradcheck", "student"))
    head = init_action_head(config.embed_dim, derive_seed(seed, "gradcheck", "head"))
    projector = init_projector(config.embed_dim, derive_seed(seed, "gradcheck", "projector"))
    images = rng.uniform(0.0, 1.0, (2, config.channels, config.image_size, config.image_size))
    gts = rng.uniform(0.0, 1.0, (2, head.action_dim))
    teacher = rng.normal((2, config.num_tokens, config.embed_dim))
    alignment = AlignmentConfig(align_lambda=0.5, enabled=True)

    def loss() -> Tensor:
        blocks = encode(images, student)
        l_action = action_loss(head_forward(blocks[-1].tokens, head), gts)
        l_align = align_loss(project(blocks[-2].tokens, projector), teacher)
        return vega_loss(l_action, l_align, alignment)

    sets = {"student": student, "head": head, "projector": projector}
    for qualified in MODEL_PARAMS:
        prefix, name = qualified.split(".", 1)
        param = sets[prefix][name]
        yield f"vega.{qualified}", lambda _x: loss(), param


def run_gradient_suite(
    seeds: Iterable[int] = GRADCHECK_SEEDS,
    h: float = GRADCHECK_STEP,
    tolerance: float = GRADCHECK_TOLERANCE,
    include_model: bool = True,
    floor: float = GRADCHECK_FLOOR,
) -> GradCheckReport:
    report = GradCheckReport(tolerance=tolerance)
    for seed in seeds:
        cases = list(primitive_cases(seed))
        if include_model:
            cases.extend(model_cases(seed))
        for name, fn, x in cases:
            err = finite_difference_check(fn, x, h, floor=floor)
            report.rows.append(GradCheckRow(name, seed, x.size, err))
            if err >= tolerance:
                logger.warning(f"gradcheck {name} seed {seed}: relative error {err:.3e}")
        logger.info(f"gradcheck seed {seed}: {len(cases)} checks, worst {report.worst_error:.3e}")
    return report
