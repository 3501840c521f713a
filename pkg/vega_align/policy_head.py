"""
vega-align - Action head

Mean-pool patch tokens, then a two-layer GELU MLP d -> 2d -> A. Under the
default reaching task A = 4: target (x, y, z) normalized to [0, 1] plus a
grasp scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .encoder import PatchTokenMap
from .errors import ShapeError
from .params import ParameterSet, xavier_uniform
from .rng import Xoshiro256
from .tensor import Tensor, add, gelu, matmul, mean, reshape

ACTION_DIM = 4
POSITION_DIMS = 3
GRASP_THRESHOLD = 0.5
HEAD_NAMES: tuple[str, ...] = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class Action:
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"an action is a vector, got shape {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def position(self) -> np.ndarray:
        return self.values[:POSITION_DIMS]

    @property
    def grasp(self) -> float:
        return float(self.values[POSITION_DIMS])


class ActionHeadParams(ParameterSet):
    """Two-layer MLP over mean-pooled tokens."""

    pooling = "mean"

    def __init__(self, tensors: dict[str, Tensor], frozen: bool = False) -> None:
        if tuple(tensors) != HEAD_NAMES:
            raise ShapeError(f"action head needs exactly {HEAD_NAMES}, got {tuple(tensors)}")
        d, h = tensors["w1"].shape
        h2, a = tensors["w2"].shape
        if h2 != h or tensors["b1"].shape != (h,) or tensors["b2"].shape != (a,):
            raise ShapeError(
                f"action head layers do not chain: w1 {(d, h)}, b1 {tensors['b1'].shape}, "
                f"w2 {(h2, a)}, b2 {tensors['b2'].shape}"
            )
        self.input_dim, self.hidden_dim, self.action_dim = d, h, a
        super().__init__(tensors, frozen=frozen)

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> ActionHeadParams:
        return cls({name: Tensor(state[name]) for name in HEAD_NAMES})


def init_action_head(dim: int, seed: int, action_dim: int = ACTION_DIM) -> ActionHeadParams:
    rng = Xoshiro256(seed)
    hidden = 2 * dim
    return ActionHeadParams(
        {
            "w1": Tensor(xavier_uniform(rng, dim, hidden)),
            "b1": Tensor(np.zeros(hidden)),
            "w2": Tensor(xavier_uniform(rng, hidden, action_dim)),
            "b2": Tensor(np.zeros(action_dim)),
        }
    )


def head_forward(tokens: Tensor, p: ActionHeadParams) -> Tensor:
    """Differentiable path: [..., N, d] tokens -> [..., A] actions."""
    if tokens.ndim < 2 or tokens.shape[-1] != p.input_dim:
        raise ShapeError(
            f"action head expects [..., N, {p.input_dim}] tokens, got shape {tokens.shape}"
        )
    pooled = mean(tokens, axis=tokens.ndim - 2)
    hidden = gelu(add(matmul(_as_rows(pooled), p["w1"]), p["b1"]))
    out = add(matmul(hidden, p["w2"]), p["b2"])
    return out if pooled.ndim == 2 else _squeeze_row(out)


def _as_rows(x: Tensor) -> Tensor:
    return x if x.ndim == 2 else reshape(x, (1, x.shape[-1]))


def _squeeze_row(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[-1],))


def predict_action(tokens: PatchTokenMap | Tensor, p: ActionHeadParams) -> Action:
    """Action for a single image's token map."""
    t = tokens.tokens if isinstance(tokens, PatchTokenMap) else tokens
    if t.ndim != 2:
        raise ShapeError(f"predict_action takes one image's [N, d] tokens, got {t.shape}")
    return Action(head_forward(t, p).numpy())


def success_mask(pred: Any, gt: Any, tau: float) -> np.ndarray:
    """Vectorized success proxy over rows of [B, A] predictions and targets."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    pv = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gv = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pv.shape != gv.shape:
        raise ShapeError(f"success proxy: shapes {pv.shape} and {gv.shape} differ")
    err = np.linalg.norm(pv[:, :POSITION_DIMS] - gv[:, :POSITION_DIMS], axis=1)
    grasp_ok = (pv[:, POSITION_DIMS] > GRASP_THRESHOLD) == (gv[:, POSITION_DIMS] > GRASP_THRESHOLD)
    return (err < tau) & grasp_ok


def success_proxy(pred: Action, gt: Action, tau: float) -> bool:
    """Position error strictly below tau and grasp on the correct side of 0.5."""
    return bool(success_mask(pred.values, gt.values, tau)[0])
