"""
vega-align - Alignment objective

Projector phi = Linear . GELU . Linear . LayerNorm, the per-patch cosine
distance between projected student tokens and frozen teacher tokens,
and the joint objective

    L_total = L_action + lambda * L_align

The projector and the teacher only exist at training time; nothing in
this module touches the action path.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .config import AlignmentConfig
from .encoder import PatchTokenMap
from .errors import AlignmentError, ShapeError
from .params import ParameterSet, xavier_uniform
from .rng import Xoshiro256
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    mean,
    row_cosine,
    scale,
    square,
    sub,
)

PROJECTOR_NAMES: tuple[str, ...] = ("ln_gain", "ln_bias", "w1", "b1", "w2", "b2")


class ProjectorParams(ParameterSet):
    """LayerNorm gain/bias and two square d x d linear layers."""

    def __init__(self, dim: int, tensors: dict[str, Tensor], frozen: bool = False) -> None:
        if tuple(tensors) != PROJECTOR_NAMES:
            raise ShapeError(f"projector needs exactly {PROJECTOR_NAMES}, got {tuple(tensors)}")
        for name, t in tensors.items():
            want = (dim, dim) if name in ("w1", "w2") else (dim,)
            if t.shape != want:
                raise ShapeError(f"projector {name}: expected {want}, got {t.shape}")
        self.dim = dim
        super().__init__(tensors, frozen=frozen)

    @property
    def ln_gain(self) -> Tensor:
        return self.tensors["ln_gain"]

    @property
    def ln_bias(self) -> Tensor:
        return self.tensors["ln_bias"]

    @property
    def w1(self) -> Tensor:
        return self.tensors["w1"]

    @property
    def b1(self) -> Tensor:
        return self.tensors["b1"]

    @property
    def w2(self) -> Tensor:
        return self.tensors["w2"]

    @property
    def b2(self) -> Tensor:
        return self.tensors["b2"]

    @classmethod
    def from_state(cls, dim: int, state: dict[str, np.ndarray]) -> ProjectorParams:
        return cls(dim, {name: Tensor(state[name]) for name in PROJECTOR_NAMES})


def projector_parameter_count(dim: int) -> int:
    """2*d^2 weights plus 4*d gain/bias entries (about 2.1M at d=1024)."""
    return 2 * dim * dim + 4 * dim


def init_projector(dim: int, seed: int) -> ProjectorParams:
    """Xavier-uniform weights, zero biases, unit LayerNorm gain."""
    rng = Xoshiro256(seed)
    return ProjectorParams(
        dim,
        {
            "ln_gain": Tensor(np.ones(dim)),
            "ln_bias": Tensor(np.zeros(dim)),
            "w1": Tensor(xavier_uniform(rng, dim, dim)),
            "b1": Tensor(np.zeros(dim)),
            "w2": Tensor(xavier_uniform(rng, dim, dim)),
            "b2": Tensor(np.zeros(dim)),
        },
    )


def project(f: PatchTokenMap | Tensor, p: ProjectorParams) -> Tensor:
    """Apply phi to every token independently."""
    tokens = f.tokens if isinstance(f, PatchTokenMap) else f
    if tokens.shape[-1] != p.dim:
        raise ShapeError(f"project: token dim {tokens.shape[-1]} does not match projector {p.dim}")
    hidden = gelu(add(matmul(layer_norm(tokens, p.ln_gain, p.ln_bias), p.w1), p.b1))
    return add(matmul(hidden, p.w2), p.b2)


def _first_zero_row(values: np.ndarray) -> tuple[int, ...] | None:
    zero = np.argwhere(~np.any(values != 0.0, axis=-1))
    return tuple(int(i) for i in zero[0]) if len(zero) else None


def align_loss(projected: Tensor, teacher: Any) -> Tensor:
    """Mean over rows of 1 - cos(projected_i, teacher_i); teacher is a constant."""
    tv = teacher.values if isinstance(teacher, Tensor) else np.asarray(teacher, dtype=np.float64)
    if projected.shape != tv.shape:
        raise ShapeError(f"align_loss: shapes {projected.shape} and {tv.shape} differ")
    row = _first_zero_row(tv)
    if row is not None:
        raise AlignmentError(f"align_loss: teacher row {_row_label(row)} has zero norm")
    row = _first_zero_row(projected.values)
    if row is not None:
        raise AlignmentError(f"align_loss: projected row {_row_label(row)} has zero norm")
    return sub(1.0, mean(row_cosine(projected, tv)))


def _row_label(index: tuple[int, ...]) -> str:
    return str(index[0]) if len(index) == 1 else str(index)


def action_loss(pred: Tensor, gt: Any) -> Tensor:
    """Mean squared error over every action component."""
    gv = gt.values if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if pred.shape != gv.shape:
        raise ShapeError(f"action_loss: shapes {pred.shape} and {gv.shape} differ")
    return mean(square(sub(pred, Tensor(gv))))


def vega_loss(l_action: Any, l_align: Any, cfg: AlignmentConfig) -> Tensor:
    """l_action + lambda * l_align, or exactly l_action when alignment is disabled."""
    if cfg.align_lambda < 0:
        raise ValueError(f"alignment lambda must be non-negative, got {cfg.align_lambda}")
    a = l_action if isinstance(l_action, Tensor) else Tensor(l_action)
    if not cfg.enabled:
        return a
    b = l_align if isinstance(l_align, Tensor) else Tensor(l_align)
    return add(a, scale(b, cfg.align_lambda))
