"""
vega-align - Optimizer and schedule

Adam without weight decay, global gradient-norm clipping, and the
single-drop step schedule (x0.1 after ``decay_step`` updates).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


class StepDecaySchedule:
    """Learning rate for update ``s`` (1-based): base while s <= decay_step, then base * factor."""

    def __init__(self, base_lr: float, decay_step: int, factor: float = 0.1) -> None:
        self.base_lr = base_lr
        self.decay_step = decay_step
        self.factor = factor

    def lr_at(self, step: int) -> float:
        return self.base_lr if step <= self.decay_step else self.base_lr * self.factor


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class Adam:
    """Adam over named parameters; a missing gradient counts as zero."""

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        names = [name for name, _ in params]
        if len(set(names)) != len(names):
            raise ValueError("optimizer parameter names must be unique")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {n: np.zeros(p.shape) for n, p in self.params}
        self.v: dict[str, np.ndarray] = {n: np.zeros(p.shape) for n, p in self.params}

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.values = p.values - update

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {"t": np.array([self.t], dtype=np.uint64)}
        for name in self.names:
            state[f"m.{name}"] = self.m[name].copy()
        for name in self.names:
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        try:
            t = int(np.asarray(state["t"]).reshape(-1)[0])
            m = {n: np.asarray(state[f"m.{n}"], dtype=np.float64) for n in self.names}
            v = {n: np.asarray(state[f"v.{n}"], dtype=np.float64) for n in self.names}
        except KeyError as exc:
            raise CheckpointError(f"optimizer state is missing {exc.args[0]!r}") from exc
        for name, p in self.params:
            if m[name].shape != p.shape or v[name].shape != p.shape:
                raise CheckpointError(
                    f"optimizer moments for {name!r} do not match shape {p.shape}"
                )
        self.t = t
        self.m = {n: a.copy() for n, a in m.items()}
        self.v = {n: a.copy() for n, a in v.items()}
